//! Placed networks, stimulus schedules and spike traces, with their text
//! formats.
//!
//! Network file:
//!
//! ```text
//! network v1
//! grid 8 8
//! defaults threshold=64 reset=0 leak=15/16 refractory=1
//! chiplet 0 0 neurons 3
//! param 2 threshold=30 leak=1/1
//! 0 3 1 2 5            # src dst_x dst_y dst_neuron weight
//! chiplet 3 1 neurons 4
//! ```
//!
//! Stimulus file: `step x y neuron weight` per line. Trace file:
//! `step x y neuron` per line. `#` starts a comment everywhere.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::config::ChipletCoord;
use crate::neuron::{NeuronParams, SynapseEntry, SynapseTable};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse { path: String, source: ParseError },
}

pub(crate) fn read_text(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn with_path<T>(path: &Path, r: Result<T, ParseError>) -> Result<T, FormatError> {
    r.map_err(|source| FormatError::Parse {
        path: path.display().to_string(),
        source,
    })
}

/// Non-empty lines with comments stripped, paired with 1-based line numbers.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

pub(crate) fn parse_num<T: std::str::FromStr>(line: usize, what: &str, s: &str) -> Result<T, ParseError> {
    s.parse()
        .map_err(|_| ParseError::new(line, format!("invalid {what} `{s}`")))
}

/// Neurons and outgoing synapses held by one chiplet.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChipletBlock {
    pub params: Vec<NeuronParams>,
    pub synapses: SynapseTable,
}

impl ChipletBlock {
    pub fn neuron_count(&self) -> usize {
        self.params.len()
    }
}

/// A network whose neurons are already assigned to chiplets. `chiplets` is
/// indexed row-major over the grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacedNetwork {
    pub grid_width: u32,
    pub grid_height: u32,
    pub defaults: NeuronParams,
    pub chiplets: Vec<ChipletBlock>,
}

impl PlacedNetwork {
    pub fn empty(grid_width: u32, grid_height: u32) -> Self {
        Self {
            grid_width,
            grid_height,
            defaults: NeuronParams::default(),
            chiplets: vec![
                ChipletBlock {
                    params: Vec::new(),
                    synapses: SynapseTable::empty(0),
                };
                (grid_width * grid_height) as usize
            ],
        }
    }

    pub fn index_of(&self, c: ChipletCoord) -> usize {
        (c.y * self.grid_width + c.x) as usize
    }

    pub fn coord_of(&self, i: usize) -> ChipletCoord {
        ChipletCoord::new(i as u32 % self.grid_width, i as u32 / self.grid_width)
    }

    pub fn neuron_count(&self) -> usize {
        self.chiplets.iter().map(|c| c.neuron_count()).sum()
    }

    pub fn synapse_count(&self) -> usize {
        self.chiplets.iter().map(|c| c.synapses.len()).sum()
    }

    pub fn from_text(text: &str) -> Result<Self, ParseError> {
        let mut lines = content_lines(text);
        match lines.next() {
            Some((_, "network v1")) => {}
            Some((n, other)) => {
                return Err(ParseError::new(n, format!("expected `network v1`, found `{other}`")))
            }
            None => return Err(ParseError::new(1, "empty network file")),
        }
        let (n, grid) = lines
            .next()
            .ok_or_else(|| ParseError::new(2, "missing `grid W H` line"))?;
        let g: Vec<&str> = grid.split_whitespace().collect();
        if g.len() != 3 || g[0] != "grid" {
            return Err(ParseError::new(n, "expected `grid W H`"));
        }
        let w: u32 = parse_num(n, "grid width", g[1])?;
        let h: u32 = parse_num(n, "grid height", g[2])?;
        if w == 0 || h == 0 || w * h > u16::MAX as u32 + 1 {
            return Err(ParseError::new(n, "grid dimensions out of range"));
        }
        let mut net = PlacedNetwork::empty(w, h);
        let mut seen = vec![false; net.chiplets.len()];
        let mut current: Option<(usize, Vec<(u32, SynapseEntry)>)> = None;

        let finish = |net: &mut PlacedNetwork, cur: Option<(usize, Vec<(u32, SynapseEntry)>)>| {
            if let Some((idx, pairs)) = cur {
                let n = net.chiplets[idx].params.len();
                net.chiplets[idx].synapses = SynapseTable::from_pairs(n, pairs);
            }
        };

        for (n, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f[0] {
                "defaults" => {
                    if current.is_some() {
                        return Err(ParseError::new(n, "`defaults` must precede chiplet sections"));
                    }
                    net.defaults = parse_params(n, net.defaults, &f[1..])?;
                }
                "chiplet" => {
                    if f.len() != 5 || f[3] != "neurons" {
                        return Err(ParseError::new(n, "expected `chiplet X Y neurons N`"));
                    }
                    let c = ChipletCoord::new(parse_num(n, "x", f[1])?, parse_num(n, "y", f[2])?);
                    if c.x >= w || c.y >= h {
                        return Err(ParseError::new(n, format!("chiplet {c} outside grid")));
                    }
                    let count: usize = parse_num(n, "neuron count", f[4])?;
                    let idx = net.index_of(c);
                    if std::mem::replace(&mut seen[idx], true) {
                        return Err(ParseError::new(n, format!("chiplet {c} declared twice")));
                    }
                    finish(&mut net, current.take());
                    net.chiplets[idx].params = vec![net.defaults; count];
                    current = Some((idx, Vec::new()));
                }
                "param" => {
                    let Some((idx, _)) = &current else {
                        return Err(ParseError::new(n, "`param` outside a chiplet section"));
                    };
                    if f.len() < 2 {
                        return Err(ParseError::new(n, "expected `param INDEX key=value...`"));
                    }
                    let i: usize = parse_num(n, "neuron index", f[1])?;
                    let params = &mut net.chiplets[*idx].params;
                    if i >= params.len() {
                        return Err(ParseError::new(n, format!("neuron {i} out of range")));
                    }
                    params[i] = parse_params(n, params[i], &f[2..])?;
                }
                _ => {
                    let Some((idx, pairs)) = current.as_mut() else {
                        return Err(ParseError::new(n, "synapse outside a chiplet section"));
                    };
                    if f.len() != 5 {
                        return Err(ParseError::new(
                            n,
                            "expected `src dst_x dst_y dst_neuron weight`",
                        ));
                    }
                    let src: u32 = parse_num(n, "source", f[0])?;
                    if src as usize >= net.chiplets[*idx].params.len() {
                        return Err(ParseError::new(n, format!("source neuron {src} out of range")));
                    }
                    let d = ChipletCoord::new(parse_num(n, "dst x", f[1])?, parse_num(n, "dst y", f[2])?);
                    if d.x >= w || d.y >= h {
                        return Err(ParseError::new(n, format!("destination {d} outside grid")));
                    }
                    pairs.push((
                        src,
                        SynapseEntry {
                            dst_neuron: parse_num(n, "dst neuron", f[3])?,
                            dst_chiplet: (d.y * w + d.x) as u16,
                            weight: parse_num(n, "weight", f[4])?,
                        },
                    ));
                }
            }
        }
        finish(&mut net, current.take());
        Ok(net)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "network v1");
        let _ = writeln!(s, "grid {} {}", self.grid_width, self.grid_height);
        let _ = writeln!(s, "defaults {}", format_params(&self.defaults));
        for (i, block) in self.chiplets.iter().enumerate() {
            if block.params.is_empty() {
                continue;
            }
            let c = self.coord_of(i);
            let _ = writeln!(s, "chiplet {} {} neurons {}", c.x, c.y, block.params.len());
            for (n, p) in block.params.iter().enumerate() {
                if *p != self.defaults {
                    let _ = writeln!(s, "param {n} {}", format_params(p));
                }
            }
            for src in 0..block.params.len() {
                for e in block.synapses.row(src) {
                    let d = self.coord_of(e.dst_chiplet as usize);
                    let _ = writeln!(s, "{src} {} {} {} {}", d.x, d.y, e.dst_neuron, e.weight);
                }
            }
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FormatError> {
        let path = path.as_ref();
        with_path(path, Self::from_text(&read_text(path)?))
    }
}

fn format_params(p: &NeuronParams) -> String {
    format!(
        "threshold={} reset={} leak={}/{} refractory={}",
        p.threshold, p.reset, p.leak_num, p.leak_den, p.refractory_period
    )
}

fn parse_params(line: usize, mut p: NeuronParams, kvs: &[&str]) -> Result<NeuronParams, ParseError> {
    for kv in kvs {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ParseError::new(line, format!("expected key=value, found `{kv}`")))?;
        match k {
            "threshold" => p.threshold = parse_num(line, k, v)?,
            "reset" => p.reset = parse_num(line, k, v)?,
            "refractory" => p.refractory_period = parse_num(line, k, v)?,
            "leak" => {
                let (a, b) = v
                    .split_once('/')
                    .ok_or_else(|| ParseError::new(line, "leak must be NUM/DEN"))?;
                p.leak_num = parse_num(line, "leak numerator", a)?;
                p.leak_den = parse_num(line, "leak denominator", b)?;
            }
            _ => return Err(ParseError::new(line, format!("unknown neuron parameter `{k}`"))),
        }
    }
    p.check().map_err(|m| ParseError::new(line, m))?;
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct StimulusEntry {
    pub step: u64,
    pub chiplet: ChipletCoord,
    pub neuron: u32,
    pub weight: i64,
}

/// External input per step, kept sorted by step (stable within a step).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stimulus {
    entries: Vec<StimulusEntry>,
}

impl Stimulus {
    pub fn new(mut entries: Vec<StimulusEntry>) -> Self {
        entries.sort_by_key(|e| e.step);
        Self { entries }
    }

    pub fn entries(&self) -> &[StimulusEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries for `step`.
    pub fn at(&self, step: u64) -> &[StimulusEntry] {
        let lo = self.entries.partition_point(|e| e.step < step);
        let hi = self.entries.partition_point(|e| e.step <= step);
        &self.entries[lo..hi]
    }

    pub fn from_text(text: &str) -> Result<Self, ParseError> {
        let mut entries = Vec::new();
        for (n, line) in content_lines(text) {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(ParseError::new(n, "expected `step x y neuron weight`"));
            }
            entries.push(StimulusEntry {
                step: parse_num(n, "step", f[0])?,
                chiplet: ChipletCoord::new(parse_num(n, "x", f[1])?, parse_num(n, "y", f[2])?),
                neuron: parse_num(n, "neuron", f[3])?,
                weight: parse_num(n, "weight", f[4])?,
            });
        }
        Ok(Self::new(entries))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let _ = writeln!(s, "{} {} {} {} {}", e.step, e.chiplet.x, e.chiplet.y, e.neuron, e.weight);
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FormatError> {
        let path = path.as_ref();
        with_path(path, Self::from_text(&read_text(path)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpikeRecord {
    pub step: u64,
    pub chiplet: ChipletCoord,
    pub neuron: u32,
}

/// Spikes sorted lexicographically by (step, chiplet, neuron).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpikeTrace {
    records: Vec<SpikeRecord>,
}

impl SpikeTrace {
    pub fn new(mut records: Vec<SpikeRecord>) -> Self {
        records.sort_unstable();
        records.dedup();
        Self { records }
    }

    pub fn records(&self) -> &[SpikeRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Union of two traces.
    pub fn merge(&self, other: &SpikeTrace) -> SpikeTrace {
        SpikeTrace::new(self.records.iter().chain(&other.records).copied().collect())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.records.len() * 12);
        for r in &self.records {
            let _ = writeln!(s, "{} {} {} {}", r.step, r.chiplet.x, r.chiplet.y, r.neuron);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ParseError> {
        let mut records = Vec::new();
        for (n, line) in content_lines(text) {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(ParseError::new(n, "malformed trace: expected `step x y neuron`"));
            }
            records.push(SpikeRecord {
                step: parse_num(n, "step", f[0])?,
                chiplet: ChipletCoord::new(parse_num(n, "x", f[1])?, parse_num(n, "y", f[2])?),
                neuron: parse_num(n, "neuron", f[3])?,
            });
        }
        if records.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ParseError::new(0, "malformed trace: records not strictly sorted"));
        }
        Ok(Self { records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FormatError> {
        let path = path.as_ref();
        with_path(path, Self::from_text(&read_text(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
network v1
grid 4 2
defaults threshold=25 reset=0 leak=9/10 refractory=0
chiplet 0 0 neurons 3
param 2 threshold=30 leak=1/1
0 3 1 2 5
0 0 0 1 -4   # local
1 3 1 0 7
chiplet 3 1 neurons 4
";

    #[test]
    fn parses_sample_network() {
        let net = PlacedNetwork::from_text(SAMPLE).unwrap();
        assert_eq!(net.neuron_count(), 7);
        assert_eq!(net.synapse_count(), 3);
        let b = &net.chiplets[0];
        assert_eq!(b.params[2].threshold, 30);
        assert_eq!(b.params[2].leak_num, 1);
        assert_eq!(b.params[0].threshold, 25);
        assert_eq!(b.synapses.row(0).len(), 2);
        assert_eq!(b.synapses.row(0)[0].dst_chiplet, 7);
        assert_eq!(net.chiplets[7].neuron_count(), 4);
    }

    #[test]
    fn text_round_trip() {
        let net = PlacedNetwork::from_text(SAMPLE).unwrap();
        let again = PlacedNetwork::from_text(&net.to_text()).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn network_errors_carry_line() {
        let bad = SAMPLE.replace("1 3 1 0 7", "1 3 9 0 7");
        let err = PlacedNetwork::from_text(&bad).unwrap_err();
        assert_eq!(err.line, 8);
        let bad = SAMPLE.replace("param 2 threshold=30", "param 2 threshold=-1");
        assert!(PlacedNetwork::from_text(&bad).is_err(), "reset must stay below threshold");
    }

    #[test]
    fn stimulus_lookup_by_step() {
        let s = Stimulus::from_text("3 0 0 1 10\n0 1 0 0 5\n3 0 0 2 -1\n").unwrap();
        assert_eq!(s.at(0).len(), 1);
        assert_eq!(s.at(3).len(), 2);
        assert!(s.at(1).is_empty());
        assert_eq!(s.at(3)[0].neuron, 1, "stable within a step");
    }

    #[test]
    fn trace_round_trip_and_truncation() {
        let t = SpikeTrace::new(vec![
            SpikeRecord { step: 1, chiplet: ChipletCoord::new(0, 1), neuron: 4 },
            SpikeRecord { step: 0, chiplet: ChipletCoord::new(2, 0), neuron: 1 },
        ]);
        let text = t.to_text();
        assert_eq!(SpikeTrace::from_text(&text).unwrap(), t);
        let truncated = &text[..text.len() - 3];
        let err = SpikeTrace::from_text(truncated).unwrap_err();
        assert_eq!(err.line, 2);
        assert!(SpikeTrace::from_text("").unwrap().is_empty());
    }
}
