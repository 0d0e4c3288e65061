//! Region-level connectomes, network synthesis, placement onto chiplets and
//! connectivity fidelity.
//!
//! Connectome file:
//!
//! ```text
//! connectome v1
//! synapses 640000
//! region telencephalon 12000
//! region tectum 30000
//! matrix
//! 0.5 1.0
//! 2.0 0.0
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ChipletCoord, WaferConfig};
use crate::network::{content_lines, parse_num, read_text, ChipletBlock, FormatError, ParseError, PlacedNetwork};
use crate::neuron::{NeuronParams, SynapseEntry, SynapseTable};

#[derive(Debug, Error)]
pub enum MapperError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("negative weight {value} at ({row},{col})")]
    NegativeWeight { row: usize, col: usize, value: f64 },
    #[error("region `{0}` has no neurons")]
    EmptyRegion(String),
    #[error("total synapse count is zero")]
    ZeroSynapses,
    #[error("weight matrix sums to zero")]
    ZeroWeight,
    #[error("invalid weight range {min}..={max}")]
    WeightRange { min: i16, max: i16 },
    #[error("target utilization {0} outside (0, 1]")]
    Utilization(f64),
    #[error("infeasible: needs {needed} chiplets at utilization {utilization}, wafer has {available}")]
    Infeasible {
        needed: usize,
        available: usize,
        utilization: f64,
    },
    #[error("infeasible: neuron {neuron} has {synapses} synapses, chiplet limit is {limit}")]
    OversizedNeuron { neuron: u64, synapses: u64, limit: u64 },
    #[error("neuron {0} has no region label")]
    Unlabeled(usize),
    #[error("network has no synapses to normalize")]
    EmptyNetwork,
    #[error("undefined correlation: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub name: String,
    pub neurons: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Connectome {
    pub regions: Vec<Region>,
    pub weights: Vec<Vec<f64>>,
    pub total_synapses: u64,
}

impl Connectome {
    pub fn new(regions: Vec<Region>, weights: Vec<Vec<f64>>, total_synapses: u64) -> Result<Self, MapperError> {
        let c = Self {
            regions,
            weights,
            total_synapses,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), MapperError> {
        let k = self.regions.len();
        if k == 0 {
            return Err(MapperError::Dimension("no regions".into()));
        }
        if self.weights.len() != k {
            return Err(MapperError::Dimension(format!(
                "{k} regions but {} matrix rows",
                self.weights.len()
            )));
        }
        for (i, row) in self.weights.iter().enumerate() {
            if row.len() != k {
                return Err(MapperError::Dimension(format!(
                    "row {i} has {} entries, expected {k}",
                    row.len()
                )));
            }
            for (j, &w) in row.iter().enumerate() {
                if !(w >= 0.0) || !w.is_finite() {
                    return Err(MapperError::NegativeWeight { row: i, col: j, value: w });
                }
            }
        }
        if let Some(r) = self.regions.iter().find(|r| r.neurons == 0) {
            return Err(MapperError::EmptyRegion(r.name.clone()));
        }
        Ok(())
    }

    pub fn neuron_count(&self) -> u64 {
        self.regions.iter().map(|r| r.neurons).sum()
    }

    /// First neuron id of each region; regions occupy contiguous id ranges.
    pub fn region_offsets(&self) -> Vec<u64> {
        let mut acc = 0;
        self.regions
            .iter()
            .map(|r| {
                let o = acc;
                acc += r.neurons;
                o
            })
            .collect()
    }

    /// Synapses per region pair: `round(total × W[i][j] / ΣW)`.
    pub fn pair_counts(&self) -> Result<Vec<Vec<u64>>, MapperError> {
        if self.total_synapses == 0 {
            return Err(MapperError::ZeroSynapses);
        }
        let sum: f64 = self.weights.iter().flatten().sum();
        if sum <= 0.0 {
            return Err(MapperError::ZeroWeight);
        }
        let total = self.total_synapses as f64;
        Ok(self
            .weights
            .iter()
            .map(|row| row.iter().map(|&w| (total * w / sum).round() as u64).collect())
            .collect())
    }

    pub fn from_text(text: &str) -> Result<Self, MapperError> {
        let mut lines = content_lines(text);
        match lines.next() {
            Some((_, "connectome v1")) => {}
            Some((n, other)) => {
                return Err(ParseError::new(n, format!("expected `connectome v1`, found `{other}`")).into())
            }
            None => return Err(ParseError::new(1, "empty connectome file").into()),
        }
        let mut total = None;
        let mut regions = Vec::new();
        let mut weights: Vec<Vec<f64>> = Vec::new();
        let mut in_matrix = false;
        for (n, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if in_matrix {
                let row = f
                    .iter()
                    .map(|s| parse_num::<f64>(n, "weight", s))
                    .collect::<Result<Vec<_>, _>>()?;
                weights.push(row);
                continue;
            }
            match f.as_slice() {
                ["synapses", v] => total = Some(parse_num::<u64>(n, "synapse count", v)?),
                ["region", name, count] => regions.push(Region {
                    name: name.to_string(),
                    neurons: parse_num(n, "neuron count", count)?,
                }),
                ["matrix"] => in_matrix = true,
                _ => return Err(ParseError::new(n, format!("unexpected line `{line}`")).into()),
            }
        }
        let total = total.ok_or_else(|| ParseError::new(2, "missing `synapses N` line"))?;
        if !in_matrix {
            return Err(ParseError::new(1, "missing `matrix` section").into());
        }
        Self::new(regions, weights, total)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("connectome v1\n");
        let _ = writeln!(s, "synapses {}", self.total_synapses);
        for r in &self.regions {
            let _ = writeln!(s, "region {} {}", r.name, r.neurons);
        }
        s.push_str("matrix\n");
        for row in &self.weights {
            let cells: Vec<String> = row.iter().map(|w| w.to_string()).collect();
            let _ = writeln!(s, "{}", cells.join(" "));
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MapperError> {
        Self::from_text(&read_text(path.as_ref())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Synapse {
    pub src: u32,
    pub dst: u32,
    pub weight: i16,
}

/// A network before placement: global neuron ids with region labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub neuron_count: usize,
    pub region_count: usize,
    /// `u32::MAX` marks an unlabeled neuron.
    pub region_of: Vec<u32>,
    pub defaults: NeuronParams,
    pub synapses: Vec<Synapse>,
}

impl Network {
    /// Two networks side by side; the second one's neurons and regions are
    /// renumbered after the first's.
    pub fn disjoint_union(&self, other: &Network) -> Network {
        let n = self.neuron_count as u32;
        let r = self.region_count as u32;
        let mut region_of = self.region_of.clone();
        region_of.extend(other.region_of.iter().map(|&g| if g == u32::MAX { g } else { g + r }));
        let mut synapses = self.synapses.clone();
        synapses.extend(other.synapses.iter().map(|s| Synapse {
            src: s.src + n,
            dst: s.dst + n,
            weight: s.weight,
        }));
        Network {
            neuron_count: self.neuron_count + other.neuron_count,
            region_count: self.region_count + other.region_count,
            region_of,
            defaults: self.defaults,
            synapses,
        }
    }

    pub fn out_degrees(&self) -> Vec<u64> {
        let mut d = vec![0u64; self.neuron_count];
        for s in &self.synapses {
            d[s.src as usize] += 1;
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightRange {
    pub min: i16,
    pub max: i16,
}

impl Default for WeightRange {
    fn default() -> Self {
        Self { min: 1, max: 16 }
    }
}

/// Expected-count synthesis. Each region pair draws from its own ChaCha
/// stream, so pairs are generated in parallel yet the result depends only on
/// the seed.
pub fn synthesize_network(
    connectome: &Connectome,
    seed: u64,
    weights: WeightRange,
    defaults: NeuronParams,
) -> Result<Network, MapperError> {
    connectome.validate()?;
    if weights.min > weights.max {
        return Err(MapperError::WeightRange {
            min: weights.min,
            max: weights.max,
        });
    }
    let counts = connectome.pair_counts()?;
    let offsets = connectome.region_offsets();
    let k = connectome.regions.len();
    let neuron_count = connectome.neuron_count() as usize;
    let per_pair: Vec<Vec<Synapse>> = (0..k * k)
        .into_par_iter()
        .map(|p| {
            let (i, j) = (p / k, p % k);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let (si, sj) = (connectome.regions[i].neurons, connectome.regions[j].neurons);
            (0..counts[i][j])
                .map(|_| Synapse {
                    src: (offsets[i] + rng.gen_range(0..si)) as u32,
                    dst: (offsets[j] + rng.gen_range(0..sj)) as u32,
                    weight: rng.gen_range(weights.min..=weights.max),
                })
                .collect()
        })
        .collect();
    let mut region_of = Vec::with_capacity(neuron_count);
    for (r, region) in connectome.regions.iter().enumerate() {
        region_of.extend(std::iter::repeat(r as u32).take(region.neurons as usize));
    }
    Ok(Network {
        neuron_count,
        region_count: k,
        region_of,
        defaults,
        synapses: per_pair.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefineOptions {
    pub max_passes: usize,
    /// Swap partners examined per neuron.
    pub candidates: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            max_passes: 4,
            candidates: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub grid_width: u32,
    pub grid_height: u32,
    pub chiplet_of: Vec<u16>,
    pub local_index: Vec<u32>,
    pub neurons_per_chiplet: Vec<u64>,
    pub synapses_per_chiplet: Vec<u64>,
    pub cut_before_refine: u64,
    pub cut_after_refine: u64,
    pub swaps: u64,
}

impl Placement {
    pub fn chiplets_used(&self) -> usize {
        self.neurons_per_chiplet.iter().filter(|&&n| n > 0).count()
    }

    pub fn coord_of_neuron(&self, neuron: usize) -> ChipletCoord {
        let i = self.chiplet_of[neuron] as u32;
        ChipletCoord::new(i % self.grid_width, i / self.grid_width)
    }

    /// `neuron x y local` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# neuron x y local\n");
        for n in 0..self.chiplet_of.len() {
            let c = self.coord_of_neuron(n);
            let _ = writeln!(s, "{n} {} {} {}", c.x, c.y, self.local_index[n]);
        }
        s
    }

    /// Checks tallies against capacity × utilization and that every neuron
    /// sits at a distinct, contiguous local slot.
    pub fn check(&self, network: &Network, cfg: &WaferConfig, utilization: f64) -> Result<(), String> {
        let (ncap, scap) = effective_caps(cfg, utilization);
        let chips = cfg.chiplet_count();
        if self.chiplet_of.len() != network.neuron_count {
            return Err("placement size differs from network".into());
        }
        let mut slots: Vec<Vec<bool>> = self
            .neurons_per_chiplet
            .iter()
            .map(|&n| vec![false; n as usize])
            .collect();
        for n in 0..network.neuron_count {
            let c = self.chiplet_of[n] as usize;
            let l = self.local_index[n] as usize;
            if c >= chips || l >= slots[c].len() || std::mem::replace(&mut slots[c][l], true) {
                return Err(format!("neuron {n} has an invalid or shared slot"));
            }
        }
        let mut syn = vec![0u64; chips];
        for s in &network.synapses {
            syn[self.chiplet_of[s.src as usize] as usize] += 1;
        }
        for c in 0..chips {
            if syn[c] != self.synapses_per_chiplet[c] {
                return Err(format!("synapse tally of chiplet {c} is stale"));
            }
            if self.neurons_per_chiplet[c] > ncap || syn[c] > scap {
                return Err(format!("chiplet {c} exceeds effective capacity"));
            }
        }
        Ok(())
    }

    /// Builds the placed network file content for the simulator.
    pub fn apply(&self, network: &Network) -> PlacedNetwork {
        let mut placed = PlacedNetwork::empty(self.grid_width, self.grid_height);
        placed.defaults = network.defaults;
        let mut pairs: Vec<Vec<(u32, SynapseEntry)>> = vec![Vec::new(); placed.chiplets.len()];
        for s in &network.synapses {
            let (src, dst) = (s.src as usize, s.dst as usize);
            pairs[self.chiplet_of[src] as usize].push((
                self.local_index[src],
                SynapseEntry {
                    dst_neuron: self.local_index[dst],
                    dst_chiplet: self.chiplet_of[dst],
                    weight: s.weight,
                },
            ));
        }
        for (c, p) in pairs.into_iter().enumerate() {
            let n = self.neurons_per_chiplet[c] as usize;
            placed.chiplets[c] = ChipletBlock {
                params: vec![network.defaults; n],
                synapses: SynapseTable::from_pairs(n, p),
            };
        }
        placed
    }
}

fn effective_caps(cfg: &WaferConfig, utilization: f64) -> (u64, u64) {
    (
        (cfg.neuron_capacity_per_chiplet as f64 * utilization).floor() as u64,
        (cfg.synapse_capacity_per_chiplet as f64 * utilization).floor() as u64,
    )
}

fn check_utilization(u: f64) -> Result<(), MapperError> {
    if u > 0.0 && u <= 1.0 {
        Ok(())
    } else {
        Err(MapperError::Utilization(u))
    }
}

/// Serpentine order keeps consecutively opened bins on adjacent chiplets.
fn serpentine(bin: usize, width: u32) -> usize {
    let w = width as usize;
    let (row, col) = (bin / w, bin % w);
    row * w + if row % 2 == 0 { col } else { w - 1 - col }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Segment {
    region: usize,
    start: u64,
    len: u64,
    bin: usize,
}

/// Region-contiguous greedy packing. `syn_prefix(r, k)` is the synapse
/// count of the first `k` neurons of region `r`.
fn pack(
    sizes: &[u64],
    syn_prefix: &dyn Fn(usize, u64) -> u64,
    ncap: u64,
    scap: u64,
) -> Result<(Vec<Segment>, Vec<(u64, u64)>), MapperError> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]));
    let mut bins: Vec<(u64, u64)> = Vec::new();
    let mut segments = Vec::new();
    for r in order {
        let n = sizes[r];
        let s = syn_prefix(r, n);
        if n <= ncap && s <= scap {
            let bin = match bins.iter().position(|&(bn, bs)| bn + n <= ncap && bs + s <= scap) {
                Some(b) => b,
                None => {
                    bins.push((0, 0));
                    bins.len() - 1
                }
            };
            bins[bin].0 += n;
            bins[bin].1 += s;
            segments.push(Segment { region: r, start: 0, len: n, bin });
            continue;
        }
        let mut start = 0;
        while start < n {
            let base = syn_prefix(r, start);
            let (mut lo, mut hi) = (0u64, ncap.min(n - start));
            while lo < hi {
                let mid = (lo + hi + 1) / 2;
                if syn_prefix(r, start + mid) - base <= scap {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            if lo == 0 {
                return Err(MapperError::OversizedNeuron {
                    neuron: start,
                    synapses: syn_prefix(r, start + 1) - base,
                    limit: scap,
                });
            }
            bins.push((lo, syn_prefix(r, start + lo) - base));
            segments.push(Segment {
                region: r,
                start,
                len: lo,
                bin: bins.len() - 1,
            });
            start += lo;
        }
    }
    Ok((segments, bins))
}

fn bins_fit(bins: usize, cfg: &WaferConfig, utilization: f64) -> Result<(), MapperError> {
    if bins > cfg.chiplet_count() {
        return Err(MapperError::Infeasible {
            needed: bins,
            available: cfg.chiplet_count(),
            utilization,
        });
    }
    Ok(())
}

pub fn inter_chiplet_synapses(network: &Network, chiplet_of: &[u16]) -> u64 {
    network
        .synapses
        .iter()
        .filter(|s| chiplet_of[s.src as usize] != chiplet_of[s.dst as usize])
        .count() as u64
}

pub fn map_network(
    network: &Network,
    cfg: &WaferConfig,
    utilization: f64,
    refine: RefineOptions,
) -> Result<Placement, MapperError> {
    check_utilization(utilization)?;
    let (ncap, scap) = effective_caps(cfg, utilization);
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); network.region_count];
    for (n, &r) in network.region_of.iter().enumerate() {
        if r as usize >= network.region_count {
            return Err(MapperError::Unlabeled(n));
        }
        members[r as usize].push(n as u32);
    }
    if network.region_of.len() != network.neuron_count {
        return Err(MapperError::Unlabeled(network.region_of.len()));
    }
    let outdeg = network.out_degrees();
    let prefixes: Vec<Vec<u64>> = members
        .iter()
        .map(|m| {
            let mut p = Vec::with_capacity(m.len() + 1);
            p.push(0);
            let mut acc = 0;
            for &n in m {
                acc += outdeg[n as usize];
                p.push(acc);
            }
            p
        })
        .collect();
    let sizes: Vec<u64> = members.iter().map(|m| m.len() as u64).collect();
    let (segments, bins) = pack(&sizes, &|r, k| prefixes[r][k as usize], ncap, scap)?;
    bins_fit(bins.len(), cfg, utilization)?;

    let mut bin_of = vec![0u32; network.neuron_count];
    for seg in &segments {
        for &n in &members[seg.region][seg.start as usize..(seg.start + seg.len) as usize] {
            bin_of[n as usize] = seg.bin as u32;
        }
    }
    let mut syn_tally: Vec<u64> = bins.iter().map(|b| b.1).collect();
    let as_chiplets = |bin_of: &[u32]| -> Vec<u16> {
        bin_of
            .iter()
            .map(|&b| serpentine(b as usize, cfg.grid_width) as u16)
            .collect()
    };
    let cut_before_refine = inter_chiplet_synapses(network, &as_chiplets(&bin_of));
    let swaps = if bins.len() > 1 {
        refine_swaps(network, &mut bin_of, &mut syn_tally, &outdeg, scap, refine)
    } else {
        0
    };

    let chiplet_of = as_chiplets(&bin_of);
    let chips = cfg.chiplet_count();
    let mut neurons_per_chiplet = vec![0u64; chips];
    let mut local_index = vec![0u32; network.neuron_count];
    for n in 0..network.neuron_count {
        let c = chiplet_of[n] as usize;
        local_index[n] = neurons_per_chiplet[c] as u32;
        neurons_per_chiplet[c] += 1;
    }
    let mut synapses_per_chiplet = vec![0u64; chips];
    for (b, &s) in syn_tally.iter().enumerate() {
        synapses_per_chiplet[serpentine(b, cfg.grid_width)] = s;
    }
    Ok(Placement {
        grid_width: cfg.grid_width,
        grid_height: cfg.grid_height,
        cut_after_refine: inter_chiplet_synapses(network, &chiplet_of),
        chiplet_of,
        local_index,
        neurons_per_chiplet,
        synapses_per_chiplet,
        cut_before_refine,
        swaps,
    })
}

fn conn_get(v: &[(u32, u32)], bin: u32) -> i64 {
    v.iter().find(|e| e.0 == bin).map_or(0, |e| e.1 as i64)
}

fn conn_add(v: &mut Vec<(u32, u32)>, bin: u32, delta: i32) {
    match v.iter().position(|e| e.0 == bin) {
        Some(i) => {
            v[i].1 = (v[i].1 as i32 + delta) as u32;
            if v[i].1 == 0 {
                v.swap_remove(i);
            }
        }
        None => v.push((bin, delta as u32)),
    }
}

/// Pairwise swaps between bins, accepted only for a strictly positive exact
/// gain `g_u + g_v − 2·w(u,v)`, so the cut never grows. Neuron counts are
/// unchanged by a swap; synapse tallies are re-checked.
fn refine_swaps(
    network: &Network,
    bin_of: &mut [u32],
    syn_tally: &mut [u64],
    outdeg: &[u64],
    scap: u64,
    opts: RefineOptions,
) -> u64 {
    let n = network.neuron_count;
    let mut deg = vec![0usize; n + 1];
    for s in network.synapses.iter().filter(|s| s.src != s.dst) {
        deg[s.src as usize + 1] += 1;
        deg[s.dst as usize + 1] += 1;
    }
    for i in 0..n {
        deg[i + 1] += deg[i];
    }
    let mut adj = vec![0u32; deg[n]];
    let mut fill = deg.clone();
    for s in network.synapses.iter().filter(|s| s.src != s.dst) {
        adj[fill[s.src as usize]] = s.dst;
        fill[s.src as usize] += 1;
        adj[fill[s.dst as usize]] = s.src;
        fill[s.dst as usize] += 1;
    }
    let nbrs = |u: usize| &adj[deg[u]..deg[u + 1]];

    let mut conn: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n];
    for u in 0..n {
        for &v in nbrs(u) {
            conn_add(&mut conn[u], bin_of[v as usize], 1);
        }
    }

    let mut swaps = 0;
    for _ in 0..opts.max_passes {
        let mut cands: std::collections::HashMap<(u32, u32), Vec<u32>> = Default::default();
        for v in 0..n {
            for &(x, c) in &conn[v] {
                if x != bin_of[v] && c > 0 {
                    cands.entry((bin_of[v], x)).or_default().push(v as u32);
                }
            }
        }
        let mut pass_swaps = 0;
        for u in 0..n {
            let a = bin_of[u];
            let own = conn_get(&conn[u], a);
            let Some((b, gu)) = conn[u]
                .iter()
                .filter(|e| e.0 != a)
                .map(|e| (e.0, e.1 as i64 - own))
                .max_by(|x, y| x.1.cmp(&y.1).then(y.0.cmp(&x.0)))
            else {
                continue;
            };
            let Some(list) = cands.get(&(b, a)) else { continue };
            let mut best: Option<(i64, u32)> = None;
            for &v in list.iter().filter(|&&v| bin_of[v as usize] == b).take(opts.candidates) {
                let vi = v as usize;
                let ta = syn_tally[a as usize] - outdeg[u] + outdeg[vi];
                let tb = syn_tally[b as usize] - outdeg[vi] + outdeg[u];
                if ta > scap || tb > scap {
                    continue;
                }
                let w_uv = nbrs(u).iter().filter(|&&x| x == v).count() as i64;
                let gv = conn_get(&conn[vi], a) - conn_get(&conn[vi], b);
                let gain = gu + gv - 2 * w_uv;
                if gain > 0 && best.map_or(true, |(g, _)| gain > g) {
                    best = Some((gain, v));
                }
            }
            let Some((_, v)) = best else { continue };
            let vi = v as usize;
            for &x in nbrs(u) {
                conn_add(&mut conn[x as usize], a, -1);
                conn_add(&mut conn[x as usize], b, 1);
            }
            for &x in nbrs(vi) {
                conn_add(&mut conn[x as usize], b, -1);
                conn_add(&mut conn[x as usize], a, 1);
            }
            syn_tally[a as usize] = syn_tally[a as usize] - outdeg[u] + outdeg[vi];
            syn_tally[b as usize] = syn_tally[b as usize] - outdeg[vi] + outdeg[u];
            bin_of[u] = b;
            bin_of[vi] = a;
            pass_swaps += 1;
        }
        swaps += pass_swaps;
        if pass_swaps == 0 {
            break;
        }
    }
    swaps
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionSpan {
    pub region: usize,
    pub start: u64,
    pub len: u64,
    pub chiplet: ChipletCoord,
}

/// Placement computed from region sizes and expected synapse counts alone,
/// for connectomes too large to materialize.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectomePlacement {
    pub spans: Vec<RegionSpan>,
    pub neurons_per_chiplet: Vec<u64>,
    pub synapses_per_chiplet: Vec<u64>,
}

impl ConnectomePlacement {
    pub fn chiplets_used(&self) -> usize {
        self.neurons_per_chiplet.iter().filter(|&&n| n > 0).count()
    }
}

pub fn map_connectome(
    connectome: &Connectome,
    cfg: &WaferConfig,
    utilization: f64,
) -> Result<ConnectomePlacement, MapperError> {
    check_utilization(utilization)?;
    connectome.validate()?;
    let (ncap, scap) = effective_caps(cfg, utilization);
    let counts = connectome.pair_counts()?;
    let sizes: Vec<u64> = connectome.regions.iter().map(|r| r.neurons).collect();
    let out: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
    // Outgoing synapses spread evenly; the first `out % n` neurons take one extra.
    let prefix = |r: usize, k: u64| {
        let (q, rem) = (out[r] / sizes[r], out[r] % sizes[r]);
        k * q + k.min(rem)
    };
    let (segments, bins) = pack(&sizes, &prefix, ncap, scap)?;
    bins_fit(bins.len(), cfg, utilization)?;
    let chips = cfg.chiplet_count();
    let mut neurons_per_chiplet = vec![0u64; chips];
    let mut synapses_per_chiplet = vec![0u64; chips];
    for (b, &(bn, bs)) in bins.iter().enumerate() {
        let c = serpentine(b, cfg.grid_width);
        neurons_per_chiplet[c] = bn;
        synapses_per_chiplet[c] = bs;
    }
    let spans = segments
        .iter()
        .map(|s| RegionSpan {
            region: s.region,
            start: s.start,
            len: s.len,
            chiplet: cfg.coord_of(serpentine(s.bin, cfg.grid_width)),
        })
        .collect();
    Ok(ConnectomePlacement {
        spans,
        neurons_per_chiplet,
        synapses_per_chiplet,
    })
}

/// Realized synapse counts between regions, normalized to sum to one.
pub fn reconstruct_connectivity(network: &Network) -> Result<Vec<Vec<f64>>, MapperError> {
    let k = network.region_count;
    if network.region_of.len() < network.neuron_count {
        return Err(MapperError::Unlabeled(network.region_of.len()));
    }
    if let Some(n) = network.region_of.iter().position(|&r| r as usize >= k) {
        return Err(MapperError::Unlabeled(n));
    }
    let mut m = vec![vec![0f64; k]; k];
    for s in &network.synapses {
        m[network.region_of[s.src as usize] as usize][network.region_of[s.dst as usize] as usize] += 1.0;
    }
    let total = network.synapses.len() as f64;
    if total == 0.0 {
        return Err(MapperError::EmptyNetwork);
    }
    for v in m.iter_mut().flatten() {
        *v /= total;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TieStats {
    /// Distinct values shared by two or more entries.
    pub groups: usize,
    /// Entries belonging to such groups.
    pub tied_entries: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityScore {
    pub spearman_r: f64,
    pub compared: usize,
    pub diagonal_excluded: bool,
    pub ties_a: TieStats,
    pub ties_b: TieStats,
}

impl FidelityScore {
    pub fn to_text(&self) -> String {
        format!(
            "spearman_r {:.6}\ncompared {}\ndiagonal {}\nties_a groups={} entries={}\nties_b groups={} entries={}\n",
            self.spearman_r,
            self.compared,
            if self.diagonal_excluded { "excluded" } else { "included" },
            self.ties_a.groups,
            self.ties_a.tied_entries,
            self.ties_b.groups,
            self.ties_b.tied_entries,
        )
    }
}

/// Average ranks (1-based) with tie statistics.
pub fn average_ranks(values: &[f64]) -> (Vec<f64>, TieStats) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0f64; values.len()];
    let mut ties = TieStats::default();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = avg;
        }
        if j - i > 1 {
            ties.groups += 1;
            ties.tied_entries += j - i;
        }
        i = j;
    }
    (ranks, ties)
}

fn flatten(m: &[Vec<f64>], exclude_diagonal: bool) -> Vec<f64> {
    m.iter()
        .enumerate()
        .flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(move |&(j, _)| !(exclude_diagonal && i == j))
                .map(|(_, &v)| v)
        })
        .collect()
}

pub fn spearman(a: &[Vec<f64>], b: &[Vec<f64>], exclude_diagonal: bool) -> Result<FidelityScore, MapperError> {
    let same_shape = a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len());
    if !same_shape {
        return Err(MapperError::Dimension("matrices differ in shape".into()));
    }
    let (fa, fb) = (flatten(a, exclude_diagonal), flatten(b, exclude_diagonal));
    if fa.len() < 2 {
        return Err(MapperError::Degenerate(format!("{} compared entries", fa.len())));
    }
    if fa.iter().chain(&fb).any(|v| v.is_nan()) {
        return Err(MapperError::Degenerate("NaN entry".into()));
    }
    let (ra, ties_a) = average_ranks(&fa);
    let (rb, ties_b) = average_ranks(&fb);
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(MapperError::Degenerate("all compared entries are equal".into()));
    }
    Ok(FidelityScore {
        spearman_r: (cov / (va * vb).sqrt()).clamp(-1.0, 1.0),
        compared: fa.len(),
        diagonal_excluded: exclude_diagonal,
        ties_a,
        ties_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conn(sizes: &[u64], w: Vec<Vec<f64>>, total: u64) -> Connectome {
        let regions = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| Region {
                name: format!("r{i}"),
                neurons: n,
            })
            .collect();
        Connectome::new(regions, w, total).unwrap()
    }

    fn synth(c: &Connectome, seed: u64) -> Network {
        synthesize_network(c, seed, WeightRange::default(), NeuronParams::default()).unwrap()
    }

    #[test]
    fn connectome_parsing_and_errors() {
        let c = Connectome::from_text("connectome v1\nsynapses 10\nregion a 5\nmatrix\n1\n").unwrap();
        assert_eq!(c.neuron_count(), 5);
        assert_eq!(Connectome::from_text(&c.to_text()).unwrap(), c);
        let non_square = "connectome v1\nsynapses 10\nregion a 5\nregion b 5\nmatrix\n1 2\n3\n";
        assert!(matches!(Connectome::from_text(non_square), Err(MapperError::Dimension(_))));
        let negative = "connectome v1\nsynapses 10\nregion a 5\nmatrix\n-1\n";
        assert!(matches!(Connectome::from_text(negative), Err(MapperError::NegativeWeight { .. })));
        let empty = "connectome v1\nsynapses 10\nregion a 0\nmatrix\n1\n";
        assert!(matches!(Connectome::from_text(empty), Err(MapperError::EmptyRegion(_))));
    }

    #[test]
    fn synthesis_counts_follow_weights() {
        let c = conn(&[10, 10], vec![vec![1.0; 2]; 2], 1000);
        let net = synth(&c, 1);
        let w = reconstruct_connectivity(&net).unwrap();
        assert_eq!(w, vec![vec![0.25; 2]; 2]);

        let c = conn(&[4, 6, 3], vec![vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 2.5], vec![0.0; 3]], 500);
        let net = synth(&c, 9);
        assert_eq!(net.synapses.len(), 500);
        assert!(net.synapses.iter().all(|s| (4..10).contains(&s.src) && (10..13).contains(&s.dst)));

        let zero = Connectome {
            total_synapses: 0,
            ..c
        };
        assert!(matches!(
            synthesize_network(&zero, 0, WeightRange::default(), NeuronParams::default()),
            Err(MapperError::ZeroSynapses)
        ));
    }

    #[test]
    fn synthesis_is_reproducible() {
        let c = conn(&[30, 50, 20], vec![vec![1.0, 2.0, 0.5]; 3], 4000);
        assert_eq!(synth(&c, 3), synth(&c, 3));
        assert_ne!(synth(&c, 3).synapses, synth(&c, 4).synapses);
    }

    #[test]
    fn hand_built_reconstruction() {
        let mut syn = vec![Synapse { src: 0, dst: 2, weight: 1 }; 3];
        syn.push(Synapse { src: 3, dst: 1, weight: 1 });
        let net = Network {
            neuron_count: 4,
            region_count: 2,
            region_of: vec![0, 0, 1, 1],
            defaults: NeuronParams::default(),
            synapses: syn,
        };
        assert_eq!(reconstruct_connectivity(&net).unwrap(), vec![vec![0.0, 0.75], vec![0.25, 0.0]]);

        let mut unlabeled = net.clone();
        unlabeled.region_of[1] = u32::MAX;
        assert!(matches!(reconstruct_connectivity(&unlabeled), Err(MapperError::Unlabeled(1))));
        let mut empty = net;
        empty.synapses.clear();
        assert!(matches!(reconstruct_connectivity(&empty), Err(MapperError::EmptyNetwork)));
    }

    #[test]
    fn spearman_examples() {
        let a = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let b = vec![vec![1.0, 3.0], vec![2.0, 4.0]];
        assert!((spearman(&a, &b, false).unwrap().spearman_r - 0.8).abs() < 1e-12);
        assert_eq!(spearman(&a, &a, false).unwrap().spearman_r, 1.0);
        let neg: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        assert_eq!(spearman(&a, &neg, false).unwrap().spearman_r, -1.0);
        let flat = vec![vec![5.0, 5.0], vec![5.0, 5.0]];
        assert!(matches!(spearman(&a, &flat, false), Err(MapperError::Degenerate(_))));
        // Off-diagonal entries of `a` are 2 and 3.
        assert_eq!(spearman(&a, &b, true).unwrap().compared, 2);
    }

    #[test]
    fn ties_get_average_ranks() {
        let (r, t) = average_ranks(&[3.0, 1.0, 3.0, 2.0, 3.0]);
        assert_eq!(r, vec![4.0, 1.0, 4.0, 2.0, 4.0]);
        assert_eq!(t, TieStats { groups: 1, tied_entries: 3 });
    }

    #[test]
    fn single_neuron_single_chiplet() {
        let net = Network {
            neuron_count: 1,
            region_count: 1,
            region_of: vec![0],
            defaults: NeuronParams::default(),
            synapses: vec![],
        };
        let cfg = WaferConfig::with_grid(2, 2);
        let p = map_network(&net, &cfg, 0.8, RefineOptions::default()).unwrap();
        assert_eq!(p.chiplets_used(), 1);
        assert_eq!(p.neurons_per_chiplet[0], 1);
        p.check(&net, &cfg, 0.8).unwrap();
    }

    #[test]
    fn large_region_splits_and_infeasible_reported() {
        let c = conn(&[25, 5], vec![vec![1.0, 1.0], vec![1.0, 1.0]], 200);
        let net = synth(&c, 2);
        let mut cfg = WaferConfig::with_grid(2, 2);
        cfg.neuron_capacity_per_chiplet = 10;
        cfg.synapse_capacity_per_chiplet = 1000;
        let p = map_network(&net, &cfg, 1.0, RefineOptions::default()).unwrap();
        p.check(&net, &cfg, 1.0).unwrap();
        assert_eq!(p.chiplets_used(), 3);
        let err = map_network(&net, &cfg, 0.5, RefineOptions::default()).unwrap_err();
        assert!(matches!(err, MapperError::Infeasible { available: 4, .. }));
    }

    #[test]
    fn refinement_pulls_split_clusters_together() {
        // Two 4-cliques, interleaved across two regions so packing splits them.
        let mut syn = Vec::new();
        for group in [[0u32, 2, 4, 6], [1, 3, 5, 7]] {
            for &a in &group {
                for &b in &group {
                    if a != b {
                        syn.push(Synapse { src: a, dst: b, weight: 1 });
                    }
                }
            }
        }
        let net = Network {
            neuron_count: 8,
            region_count: 2,
            region_of: vec![0, 0, 0, 0, 1, 1, 1, 1],
            defaults: NeuronParams::default(),
            synapses: syn,
        };
        let mut cfg = WaferConfig::with_grid(2, 1);
        cfg.neuron_capacity_per_chiplet = 4;
        let p = map_network(&net, &cfg, 1.0, RefineOptions::default()).unwrap();
        p.check(&net, &cfg, 1.0).unwrap();
        assert_eq!(p.cut_before_refine, 16);
        assert_eq!(p.cut_after_refine, 0);
        assert_eq!(p.cut_after_refine, inter_chiplet_synapses(&net, &p.chiplet_of));
    }

    #[test]
    fn applied_placement_preserves_edges() {
        let c = conn(&[6, 9], vec![vec![1.0, 3.0], vec![0.5, 1.0]], 120);
        let net = synth(&c, 5);
        let mut cfg = WaferConfig::with_grid(2, 2);
        cfg.neuron_capacity_per_chiplet = 8;
        let p = map_network(&net, &cfg, 1.0, RefineOptions::default()).unwrap();
        let placed = p.apply(&net);
        assert_eq!(placed.synapse_count(), 120);
        assert_eq!(placed.neuron_count(), 15);
        let text = placed.to_text();
        assert_eq!(PlacedNetwork::from_text(&text).unwrap(), placed);
        assert_eq!(p.apply(&synth(&c, 5)).to_text(), text);
    }

    #[test]
    fn connectome_scale_packing() {
        let c = conn(&[9_500_000], vec![vec![1.0]], 500_000_000);
        let cfg = WaferConfig::default();
        let p = map_connectome(&c, &cfg, 1.0).unwrap();
        // Synapses bind before neurons here, and whole neurons cannot be split.
        assert_eq!(p.chiplets_used(), 6);
        assert!(p.synapses_per_chiplet.iter().all(|&s| s <= 100_000_000));
        assert_eq!(p.neurons_per_chiplet.iter().sum::<u64>(), 9_500_000);
        assert_eq!(p.synapses_per_chiplet.iter().sum::<u64>(), 500_000_000);
        assert!(map_connectome(&c, &cfg, 0.8).unwrap().chiplets_used() > 6);
    }
}
