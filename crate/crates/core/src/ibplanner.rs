//! Interposer bump planning: candidate die-to-die lanes, slack-constrained
//! net assignment, floorplan checks and parasitic feedback.
//!
//! Geometry file (millimetres, lower-left corner then size):
//!
//! ```text
//! geometry v1
//! chiplet c00 0.0 0.0 10.0 10.0
//! chiplet c10 11.0 0.0 10.0 10.0
//! ```
//!
//! Netlist file (`-` for the slack of a power net):
//!
//! ```text
//! netlist v1
//! net d0 c00.tx0 c10.rx0 signal 0.05
//! net vdd c00.vdd c10.vdd power -
//! ```
//!
//! Lengths are held as integer nanometres so that assignment totals compare
//! exactly.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::network::{content_lines, parse_num, read_text, FormatError, ParseError};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("chiplets `{a}` and `{b}` overlap")]
    Overlap { a: String, b: String },
    #[error("lane pitch must be positive")]
    Pitch,
    #[error("invalid netlist: {0}")]
    Netlist(String),
    #[error("infeasible: net `{net}` references unknown chiplet `{chiplet}`")]
    UnknownChiplet { net: String, chiplet: String },
    #[error("infeasible: net `{net}` joins non-adjacent chiplets `{a}` and `{b}`")]
    NoRoute { net: String, a: String, b: String },
    #[error("infeasible: net `{net}` has slack {slack_ns} ns but its fastest path takes {best_delay_ns} ns")]
    InfeasibleNet {
        net: String,
        slack_ns: f64,
        best_delay_ns: f64,
    },
    #[error("infeasible: no slack-feasible matching between `{a}` and `{b}`; blocking nets: {}", .blocking.join(", "))]
    Unmatched {
        a: String,
        b: String,
        blocking: Vec<String>,
    },
}

impl PlanError {
    /// True for errors that mean "no valid plan exists" rather than bad input.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            PlanError::UnknownChiplet { .. }
                | PlanError::NoRoute { .. }
                | PlanError::InfeasibleNet { .. }
                | PlanError::Unmatched { .. }
        )
    }
}

const NM_PER_MM: f64 = 1e6;

fn mm_to_nm(mm: f64) -> i64 {
    (mm * NM_PER_MM).round() as i64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChipletRect {
    pub name: String,
    pub x_nm: i64,
    pub y_nm: i64,
    pub w_nm: i64,
    pub h_nm: i64,
}

impl ChipletRect {
    pub fn new(name: &str, x_mm: f64, y_mm: f64, w_mm: f64, h_mm: f64) -> Self {
        Self {
            name: name.to_string(),
            x_nm: mm_to_nm(x_mm),
            y_nm: mm_to_nm(y_mm),
            w_nm: mm_to_nm(w_mm),
            h_nm: mm_to_nm(h_mm),
        }
    }

    fn x1(&self) -> i64 {
        self.x_nm + self.w_nm
    }

    fn y1(&self) -> i64 {
        self.y_nm + self.h_nm
    }

    fn intersects(&self, o: &ChipletRect) -> bool {
        self.x_nm < o.x1() && o.x_nm < self.x1() && self.y_nm < o.y1() && o.y_nm < self.y1()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Geometry {
    pub chiplets: Vec<ChipletRect>,
}

impl Geometry {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.chiplets.iter().position(|c| c.name == name)
    }

    pub fn from_text(text: &str) -> Result<Self, PlanError> {
        let mut lines = content_lines(text);
        match lines.next() {
            Some((_, "geometry v1")) => {}
            Some((n, other)) => {
                return Err(ParseError::new(n, format!("expected `geometry v1`, found `{other}`")).into())
            }
            None => return Err(ParseError::new(1, "empty geometry file").into()),
        }
        let mut g = Geometry::default();
        for (n, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            let ["chiplet", name, x, y, w, h] = f.as_slice() else {
                return Err(ParseError::new(n, "expected `chiplet NAME X Y W H`").into());
            };
            let (w, h): (f64, f64) = (parse_num(n, "width", w)?, parse_num(n, "height", h)?);
            if !(w > 0.0 && h > 0.0) {
                return Err(ParseError::new(n, "chiplet size must be positive").into());
            }
            if g.index_of(name).is_some() {
                return Err(ParseError::new(n, format!("duplicate chiplet `{name}`")).into());
            }
            g.chiplets.push(ChipletRect::new(name, parse_num(n, "x", x)?, parse_num(n, "y", y)?, w, h));
        }
        Ok(g)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PlanError> {
        Self::from_text(&read_text(path.as_ref())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NetClass {
    Signal,
    Power,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    pub name: String,
    pub src_chiplet: String,
    pub src_pin: String,
    pub dst_chiplet: String,
    pub dst_pin: String,
    pub class: NetClass,
    pub slack_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Netlist {
    pub nets: Vec<Net>,
}

impl Netlist {
    pub fn new(nets: Vec<Net>) -> Result<Self, PlanError> {
        let mut names = HashSet::new();
        for n in &nets {
            if !names.insert(n.name.as_str()) {
                return Err(PlanError::Netlist(format!("duplicate net `{}`", n.name)));
            }
            if n.src_chiplet == n.dst_chiplet && n.src_pin == n.dst_pin {
                return Err(PlanError::Netlist(format!("net `{}` starts and ends on one pin", n.name)));
            }
            if n.class == NetClass::Signal && !(n.slack_ns >= 0.0) {
                return Err(PlanError::Netlist(format!("signal net `{}` has negative slack", n.name)));
            }
        }
        Ok(Self { nets })
    }

    pub fn from_text(text: &str) -> Result<Self, PlanError> {
        let mut lines = content_lines(text);
        match lines.next() {
            Some((_, "netlist v1")) => {}
            Some((n, other)) => {
                return Err(ParseError::new(n, format!("expected `netlist v1`, found `{other}`")).into())
            }
            None => return Err(ParseError::new(1, "empty netlist file").into()),
        }
        let pin = |n: usize, s: &str| -> Result<(String, String), ParseError> {
            s.split_once('.')
                .map(|(c, p)| (c.to_string(), p.to_string()))
                .ok_or_else(|| ParseError::new(n, format!("expected CHIPLET.PIN, found `{s}`")))
        };
        let mut nets = Vec::new();
        for (n, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            let ["net", name, src, dst, class, slack] = f.as_slice() else {
                return Err(ParseError::new(n, "expected `net NAME SRC.PIN DST.PIN CLASS SLACK`").into());
            };
            let class = match *class {
                "signal" => NetClass::Signal,
                "power" => NetClass::Power,
                other => return Err(ParseError::new(n, format!("unknown net class `{other}`")).into()),
            };
            let slack_ns = match (*slack, class) {
                ("-", NetClass::Power) => f64::INFINITY,
                (s, _) => parse_num(n, "slack", s)?,
            };
            let (src_chiplet, src_pin) = pin(n, src)?;
            let (dst_chiplet, dst_pin) = pin(n, dst)?;
            nets.push(Net {
                name: name.to_string(),
                src_chiplet,
                src_pin,
                dst_chiplet,
                dst_pin,
                class,
                slack_ns,
            });
        }
        Self::new(nets)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PlanError> {
        Self::from_text(&read_text(path.as_ref())?)
    }
}

/// Per-millimetre interconnect constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireModel {
    pub delay_ps_per_mm: f64,
    pub res_ohm_per_mm: f64,
    pub cap_pf_per_mm: f64,
}

impl Default for WireModel {
    fn default() -> Self {
        Self {
            delay_ps_per_mm: 6.7,
            res_ohm_per_mm: 25.0,
            cap_pf_per_mm: 0.2,
        }
    }
}

impl WireModel {
    pub fn delay_ns(&self, length_mm: f64) -> f64 {
        length_mm * self.delay_ps_per_mm / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpSite {
    pub x_um: f64,
    pub y_um: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathCandidate {
    pub id: usize,
    /// Chiplet indices with `a < b`.
    pub a: usize,
    pub b: usize,
    pub lane: usize,
    pub a_site: BumpSite,
    pub b_site: BumpSite,
    pub length_nm: i64,
    pub length_mm: f64,
    pub delay_ns: f64,
    pub capacitance_pf: f64,
    pub resistance_ohm: f64,
}

fn site(x_nm: i64, y_nm: i64) -> BumpSite {
    BumpSite {
        x_um: x_nm as f64 / 1000.0,
        y_um: y_nm as f64 / 1000.0,
    }
}

/// Facing edges of two separated chiplets with overlapping projections:
/// `(gap, lateral_lo, lateral_hi, horizontal)`.
fn facing(a: &ChipletRect, b: &ChipletRect) -> Option<(i64, i64, i64, bool)> {
    let (ylo, yhi) = (a.y_nm.max(b.y_nm), a.y1().min(b.y1()));
    if ylo < yhi {
        let gap = (b.x_nm - a.x1()).max(a.x_nm - b.x1());
        if gap >= 0 {
            return Some((gap, ylo, yhi, true));
        }
    }
    let (xlo, xhi) = (a.x_nm.max(b.x_nm), a.x1().min(b.x1()));
    if xlo < xhi {
        let gap = (b.y_nm - a.y1()).max(a.y_nm - b.y1());
        if gap >= 0 {
            return Some((gap, xlo, xhi, false));
        }
    }
    None
}

/// Candidate lanes for every adjacent pair, sorted by length then id. Lane
/// `k` sits `k` pitches from the centre of the shared edge span and costs
/// `k` pitches of extra length for the jog.
pub fn enumerate_paths(
    geometry: &Geometry,
    pitch_mm: f64,
    fanout: usize,
    wire: &WireModel,
) -> Result<Vec<PathCandidate>, PlanError> {
    if !(pitch_mm > 0.0) {
        return Err(PlanError::Pitch);
    }
    let cs = &geometry.chiplets;
    for i in 0..cs.len() {
        for j in i + 1..cs.len() {
            if cs[i].intersects(&cs[j]) {
                return Err(PlanError::Overlap {
                    a: cs[i].name.clone(),
                    b: cs[j].name.clone(),
                });
            }
        }
    }
    let pitch = mm_to_nm(pitch_mm);
    let mut paths = Vec::new();
    for i in 0..cs.len() {
        for j in i + 1..cs.len() {
            let Some((gap, lo, hi, horizontal)) = facing(&cs[i], &cs[j]) else {
                continue;
            };
            let (left, right) = if horizontal {
                if cs[i].x_nm <= cs[j].x_nm { (&cs[i], &cs[j]) } else { (&cs[j], &cs[i]) }
            } else if cs[i].y_nm <= cs[j].y_nm {
                (&cs[i], &cs[j])
            } else {
                (&cs[j], &cs[i])
            };
            // The channel between the facing edges must be clear.
            let channel = if horizontal {
                ChipletRect { name: String::new(), x_nm: left.x1(), y_nm: lo, w_nm: gap, h_nm: hi - lo }
            } else {
                ChipletRect { name: String::new(), x_nm: lo, y_nm: left.y1(), w_nm: hi - lo, h_nm: gap }
            };
            let blocked = gap > 0
                && cs
                    .iter()
                    .enumerate()
                    .any(|(k, c)| k != i && k != j && c.intersects(&channel));
            if blocked {
                continue;
            }
            let mid = (lo + hi) / 2;
            for lane in 0..fanout {
                let lat = (mid + lane as i64 * pitch).min(hi);
                let (pa, pb) = if horizontal {
                    ((left.x1(), lat), (right.x_nm, lat))
                } else {
                    ((lat, left.y1()), (lat, right.y_nm))
                };
                let (sa, sb) = if std::ptr::eq(left, &cs[i]) { (pa, pb) } else { (pb, pa) };
                let length_nm = gap + lane as i64 * pitch;
                let length_mm = length_nm as f64 / NM_PER_MM;
                paths.push(PathCandidate {
                    id: paths.len(),
                    a: i,
                    b: j,
                    lane,
                    a_site: site(sa.0, sa.1),
                    b_site: site(sb.0, sb.1),
                    length_nm,
                    length_mm,
                    delay_ns: wire.delay_ns(length_mm),
                    capacitance_pf: length_mm * wire.cap_pf_per_mm,
                    resistance_ohm: length_mm * wire.res_ohm_per_mm,
                });
            }
        }
    }
    paths.sort_by_key(|p| (p.length_nm, p.id));
    Ok(paths)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Hungarian,
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetAssignment {
    pub net: usize,
    pub path: usize,
    pub length_nm: i64,
    pub delay_ns: f64,
    pub slack_ns: f64,
    pub margin_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// Signal nets in netlist order.
    pub entries: Vec<NetAssignment>,
    pub total_length_nm: i64,
}

impl Assignment {
    pub fn total_length_mm(&self) -> f64 {
        self.total_length_nm as f64 / NM_PER_MM
    }

    pub fn to_text(&self, netlist: &Netlist, paths: &[PathCandidate]) -> String {
        let by_id: BTreeMap<usize, &PathCandidate> = paths.iter().map(|p| (p.id, p)).collect();
        let mut s = String::from("# net path length_mm delay_ns slack_ns margin_ns\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{} {} {:.6} {:.6} {:.6} {:.6}",
                netlist.nets[e.net].name,
                by_id[&e.path].id,
                e.length_nm as f64 / NM_PER_MM,
                e.delay_ns,
                e.slack_ns,
                e.margin_ns
            );
        }
        let _ = writeln!(s, "# total_length_mm {:.6}", self.total_length_mm());
        s
    }
}

/// Minimum-cost assignment of `n` rows to distinct columns of an `n × m`
/// matrix (`n ≤ m`). Returns the column chosen for each row.
pub fn hungarian(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "more rows than columns");
    let inf = i64::MAX / 4;
    let (mut u, mut v) = (vec![0i64; n + 1], vec![0i64; m + 1]);
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

struct Group {
    a: usize,
    b: usize,
    nets: Vec<usize>,
}

fn group_nets(netlist: &Netlist, geometry: &Geometry, paths: &[PathCandidate]) -> Result<Vec<Group>, PlanError> {
    let adjacent: HashSet<(usize, usize)> = paths.iter().map(|p| (p.a, p.b)).collect();
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (k, net) in netlist.nets.iter().enumerate() {
        if net.class != NetClass::Signal {
            continue;
        }
        let find = |c: &str| {
            geometry.index_of(c).ok_or_else(|| PlanError::UnknownChiplet {
                net: net.name.clone(),
                chiplet: c.to_string(),
            })
        };
        let (s, d) = (find(&net.src_chiplet)?, find(&net.dst_chiplet)?);
        let key = (s.min(d), s.max(d));
        if !adjacent.contains(&key) {
            return Err(PlanError::NoRoute {
                net: net.name.clone(),
                a: net.src_chiplet.clone(),
                b: net.dst_chiplet.clone(),
            });
        }
        groups.entry(key).or_default().push(k);
    }
    Ok(groups.into_iter().map(|((a, b), nets)| Group { a, b, nets }).collect())
}

fn feasible(delay_ns: f64, slack_ns: f64) -> bool {
    delay_ns <= slack_ns
}

/// Assigns every signal net to its own lane between its two chiplets.
/// Cost is lane length; a lane slower than the net's slack is forbidden.
pub fn assign_nets(
    netlist: &Netlist,
    geometry: &Geometry,
    paths: &[PathCandidate],
    algorithm: Algorithm,
) -> Result<Assignment, PlanError> {
    let groups = group_nets(netlist, geometry, paths)?;
    let mut entries = Vec::new();
    for g in &groups {
        let lanes: Vec<&PathCandidate> = paths.iter().filter(|p| p.a == g.a && p.b == g.b).collect();
        for &k in &g.nets {
            let net = &netlist.nets[k];
            let best = lanes.iter().map(|p| p.delay_ns).fold(f64::INFINITY, f64::min);
            if !feasible(best, net.slack_ns) {
                return Err(PlanError::InfeasibleNet {
                    net: net.name.clone(),
                    slack_ns: net.slack_ns,
                    best_delay_ns: best,
                });
            }
        }
        let unmatched = |blocking: Vec<String>| PlanError::Unmatched {
            a: geometry.chiplets[g.a].name.clone(),
            b: geometry.chiplets[g.b].name.clone(),
            blocking,
        };
        let chosen: Vec<usize> = match algorithm {
            Algorithm::Greedy => {
                let mut order = g.nets.clone();
                order.sort_by(|&x, &y| netlist.nets[x].slack_ns.total_cmp(&netlist.nets[y].slack_ns).then(x.cmp(&y)));
                let mut taken = vec![false; lanes.len()];
                let mut pick = BTreeMap::new();
                for &k in &order {
                    let slack = netlist.nets[k].slack_ns;
                    match (0..lanes.len()).find(|&l| !taken[l] && feasible(lanes[l].delay_ns, slack)) {
                        Some(l) => {
                            taken[l] = true;
                            pick.insert(k, l);
                        }
                        None => return Err(unmatched(vec![netlist.nets[k].name.clone()])),
                    }
                }
                g.nets.iter().map(|k| pick[k]).collect()
            }
            Algorithm::Hungarian => {
                if g.nets.len() > lanes.len() {
                    let names = g.nets[lanes.len()..].iter().map(|&k| netlist.nets[k].name.clone()).collect();
                    return Err(unmatched(names));
                }
                let big = lanes.iter().map(|p| p.length_nm).sum::<i64>() + 1;
                let cost: Vec<Vec<i64>> = g
                    .nets
                    .iter()
                    .map(|&k| {
                        lanes
                            .iter()
                            .map(|p| if feasible(p.delay_ns, netlist.nets[k].slack_ns) { p.length_nm } else { big })
                            .collect()
                    })
                    .collect();
                let cols = hungarian(&cost);
                let blocking: Vec<String> = g
                    .nets
                    .iter()
                    .zip(&cols)
                    .enumerate()
                    .filter(|&(r, (_, &c))| cost[r][c] == big)
                    .map(|(_, (&k, _))| netlist.nets[k].name.clone())
                    .collect();
                if !blocking.is_empty() {
                    return Err(unmatched(blocking));
                }
                cols
            }
        };
        for (&k, &l) in g.nets.iter().zip(&chosen) {
            let p = lanes[l];
            let slack = netlist.nets[k].slack_ns;
            entries.push(NetAssignment {
                net: k,
                path: p.id,
                length_nm: p.length_nm,
                delay_ns: p.delay_ns,
                slack_ns: slack,
                margin_ns: slack - p.delay_ns,
            });
        }
    }
    entries.sort_by_key(|e| e.net);
    Ok(Assignment {
        total_length_nm: entries.iter().map(|e| e.length_nm).sum(),
        entries,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinLoad {
    pub net: String,
    pub pin: String,
    pub resistance_ohm: f64,
    pub capacitance_pf: f64,
    pub delay_ns: f64,
    pub margin_ns: f64,
}

/// Load seen at both pins of every assigned net.
pub fn estimate_parasitics(assignment: &Assignment, netlist: &Netlist, wire: &WireModel) -> Vec<PinLoad> {
    let mut out = Vec::with_capacity(assignment.entries.len() * 2);
    for e in &assignment.entries {
        let net = &netlist.nets[e.net];
        let mm = e.length_nm as f64 / NM_PER_MM;
        for pin in [
            format!("{}.{}", net.src_chiplet, net.src_pin),
            format!("{}.{}", net.dst_chiplet, net.dst_pin),
        ] {
            out.push(PinLoad {
                net: net.name.clone(),
                pin,
                resistance_ohm: mm * wire.res_ohm_per_mm,
                capacitance_pf: mm * wire.cap_pf_per_mm,
                delay_ns: wire.delay_ns(mm),
                margin_ns: e.slack_ns - wire.delay_ns(mm),
            });
        }
    }
    out
}

pub fn feedback_text(loads: &[PinLoad]) -> String {
    let mut s = String::from("# net pin r_ohm c_pf delay_ns margin_ns\n");
    for l in loads {
        let _ = writeln!(
            s,
            "{} {} {:.6} {:.6} {:.6} {:.6}",
            l.net, l.pin, l.resistance_ohm, l.capacitance_pf, l.delay_ns, l.margin_ns
        );
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BumpRole {
    Signal,
    Power,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bump {
    pub net: String,
    pub role: BumpRole,
    pub x_um: f64,
    pub y_um: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChipletBumps {
    pub name: String,
    /// Die outline `(x0, y0, x1, y1)` in µm.
    pub outline: (f64, f64, f64, f64),
    pub band_um: f64,
    /// Power region `(x0, y0, x1, y1)` in µm.
    pub central: (f64, f64, f64, f64),
    pub bumps: Vec<Bump>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BumpPlan {
    pub chiplets: Vec<ChipletBumps>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloorplanViolation {
    pub chiplet: String,
    pub net: String,
    pub role: BumpRole,
    pub x_um: f64,
    pub y_um: f64,
}

impl std::fmt::Display for FloorplanViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let want = match self.role {
            BumpRole::Signal => "signal bump outside peripheral band",
            BumpRole::Power => "power bump outside central region",
        };
        write!(f, "{}: {want}: net {} at ({:.3}, {:.3}) um", self.chiplet, self.net, self.x_um, self.y_um)
    }
}

/// Signal bumps sit on lane endpoints; power bumps are laid out on a grid
/// around the die centre.
pub fn build_bump_plan(
    geometry: &Geometry,
    netlist: &Netlist,
    paths: &[PathCandidate],
    assignment: &Assignment,
    band_mm: f64,
    power_pitch_mm: f64,
) -> BumpPlan {
    let by_id: BTreeMap<usize, &PathCandidate> = paths.iter().map(|p| (p.id, p)).collect();
    let band_um = band_mm * 1000.0;
    let mut plan = BumpPlan {
        chiplets: geometry
            .chiplets
            .iter()
            .map(|c| {
                let o = (
                    c.x_nm as f64 / 1000.0,
                    c.y_nm as f64 / 1000.0,
                    c.x1() as f64 / 1000.0,
                    c.y1() as f64 / 1000.0,
                );
                ChipletBumps {
                    name: c.name.clone(),
                    outline: o,
                    band_um,
                    central: (o.0 + band_um, o.1 + band_um, o.2 - band_um, o.3 - band_um),
                    bumps: Vec::new(),
                }
            })
            .collect(),
    };
    for e in &assignment.entries {
        let p = by_id[&e.path];
        let name = &netlist.nets[e.net].name;
        for (c, s) in [(p.a, p.a_site), (p.b, p.b_site)] {
            plan.chiplets[c].bumps.push(Bump {
                net: name.clone(),
                role: BumpRole::Signal,
                x_um: s.x_um,
                y_um: s.y_um,
            });
        }
    }
    let pitch_um = power_pitch_mm * 1000.0;
    let mut power_slots = vec![0usize; plan.chiplets.len()];
    for net in netlist.nets.iter().filter(|n| n.class == NetClass::Power) {
        for chip in [&net.src_chiplet, &net.dst_chiplet] {
            let Some(c) = geometry.index_of(chip) else { continue };
            let cb = &mut plan.chiplets[c];
            let k = power_slots[c];
            power_slots[c] += 1;
            let (cx, cy) = ((cb.outline.0 + cb.outline.2) / 2.0, (cb.outline.1 + cb.outline.3) / 2.0);
            // Row-major 4-wide grid centred on the die, clamped into the core.
            let (col, row) = ((k % 4) as f64 - 1.5, (k / 4) as f64);
            cb.bumps.push(Bump {
                net: net.name.clone(),
                role: BumpRole::Power,
                x_um: (cx + col * pitch_um).clamp(cb.central.0, cb.central.2),
                y_um: (cy + row * pitch_um).clamp(cb.central.1, cb.central.3),
            });
        }
    }
    plan
}

pub fn check_floorplan(plan: &BumpPlan) -> Vec<FloorplanViolation> {
    let mut out = Vec::new();
    for c in &plan.chiplets {
        let (x0, y0, x1, y1) = c.outline;
        for b in &c.bumps {
            let ok = match b.role {
                BumpRole::Signal => {
                    let inside = b.x_um >= x0 && b.x_um <= x1 && b.y_um >= y0 && b.y_um <= y1;
                    let edge = (b.x_um - x0).min(x1 - b.x_um).min(b.y_um - y0).min(y1 - b.y_um);
                    inside && edge <= c.band_um
                }
                BumpRole::Power => {
                    let (cx0, cy0, cx1, cy1) = c.central;
                    b.x_um >= cx0 && b.x_um <= cx1 && b.y_um >= cy0 && b.y_um <= cy1
                }
            };
            if !ok {
                out.push(FloorplanViolation {
                    chiplet: c.name.clone(),
                    net: b.net.clone(),
                    role: b.role,
                    x_um: b.x_um,
                    y_um: b.y_um,
                });
            }
        }
    }
    out
}
