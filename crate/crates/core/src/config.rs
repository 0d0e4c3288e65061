//! Static wafer description: grid, chiplet capacities, clock and energy
//! constants, link parameters, the sync-domain partition and the adaptive
//! step policy.
//!
//! The on-disk form is TOML. Every field is optional; omitted fields take the
//! defaults below, and an omitted `sync_domain` list is replaced by a tiling
//! of the grid into 4×4 blocks with block 0 as global master.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Widest grid whose hop offsets still fit the 6-bit signed AER header fields.
pub const MAX_GRID_DIM: u32 = 32;
/// Largest per-chiplet neuron count addressable by the 22-bit neuron field.
pub const MAX_NEURONS_PER_CHIPLET: u64 = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct ChipletCoord {
    pub x: u32,
    pub y: u32,
}

impl ChipletCoord {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: ChipletCoord) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl From<[u32; 2]> for ChipletCoord {
    fn from([x, y]: [u32; 2]) -> Self {
        Self { x, y }
    }
}

impl From<ChipletCoord> for [u32; 2] {
    fn from(c: ChipletCoord) -> Self {
        [c.x, c.y]
    }
}

impl fmt::Display for ChipletCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncDomain {
    pub id: u32,
    #[serde(default)]
    pub global_master: bool,
    pub members: Vec<ChipletCoord>,
}

/// Adaptive time-step parameters. Budgets are in clock cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepPolicy {
    pub initial_budget: u64,
    /// Weight of the newest observation; 0 freezes the budget.
    pub smoothing: f64,
    pub min_budget: u64,
    pub max_budget: u64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            initial_budget: 10_000,
            smoothing: 0.5,
            min_budget: 1_000,
            max_budget: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaferConfig {
    pub grid_width: u32,
    pub grid_height: u32,
    pub neuron_capacity_per_chiplet: u64,
    pub synapse_capacity_per_chiplet: u64,
    pub clock_hz: u64,
    pub sops_per_cycle_per_chiplet: u64,
    /// Neuron-update lanes per chiplet (neurons advanced per cycle).
    pub neuron_parallelism: u64,
    /// Cycles per handshake phase; one hop costs four phases.
    pub link_phase_cycles: u64,
    /// Per-virtual-channel FIFO depth on every router input and output.
    pub link_fifo_depth: usize,
    pub relay_threshold_hops: u32,
    /// Output-queue occupancy above which a long XY packet switches to YX.
    pub relay_occupancy_trigger: usize,
    pub energy_per_sop_pj: f64,
    pub static_power_w: f64,
    pub step_policy: StepPolicy,
    #[serde(rename = "sync_domain")]
    pub sync_domains: Vec<SyncDomain>,
}

impl Default for WaferConfig {
    fn default() -> Self {
        let mut cfg = Self {
            grid_width: 8,
            grid_height: 8,
            neuron_capacity_per_chiplet: 2_350_000,
            synapse_capacity_per_chiplet: 100_000_000,
            clock_hz: 333_000_000,
            sops_per_cycle_per_chiplet: 3003,
            neuron_parallelism: 1024,
            link_phase_cycles: 1,
            link_fifo_depth: 4,
            relay_threshold_hops: 4,
            relay_occupancy_trigger: 2,
            energy_per_sop_pj: 4.9,
            static_power_w: 0.0,
            step_policy: StepPolicy::default(),
            sync_domains: Vec::new(),
        };
        cfg.sync_domains = default_partition(cfg.grid_width, cfg.grid_height);
        cfg
    }
}

/// Tiles the grid into 4×4 blocks (clipped at the edges), numbered
/// row-major; domain 0 is the global master.
pub fn default_partition(width: u32, height: u32) -> Vec<SyncDomain> {
    const TILE: u32 = 4;
    let mut domains = Vec::new();
    for by in (0..height).step_by(TILE as usize) {
        for bx in (0..width).step_by(TILE as usize) {
            let mut members = Vec::new();
            for y in by..(by + TILE).min(height) {
                for x in bx..(bx + TILE).min(width) {
                    members.push(ChipletCoord::new(x, y));
                }
            }
            let id = domains.len() as u32;
            domains.push(SyncDomain {
                id,
                global_master: id == 0,
                members,
            });
        }
    }
    domains
}

impl WaferConfig {
    /// Default constants on a custom grid, with the default domain tiling.
    pub fn with_grid(width: u32, height: u32) -> Self {
        Self {
            grid_width: width,
            grid_height: height,
            sync_domains: default_partition(width, height),
            ..Self::default()
        }
    }

    pub fn chiplet_count(&self) -> usize {
        self.grid_width as usize * self.grid_height as usize
    }

    pub fn contains(&self, c: ChipletCoord) -> bool {
        c.x < self.grid_width && c.y < self.grid_height
    }

    /// Row-major linear index.
    pub fn index_of(&self, c: ChipletCoord) -> usize {
        c.y as usize * self.grid_width as usize + c.x as usize
    }

    pub fn coord_of(&self, index: usize) -> ChipletCoord {
        let w = self.grid_width as usize;
        ChipletCoord::new((index % w) as u32, (index / w) as u32)
    }

    pub fn coords(&self) -> impl Iterator<Item = ChipletCoord> + '_ {
        (0..self.chiplet_count()).map(|i| self.coord_of(i))
    }

    pub fn total_neuron_capacity(&self) -> u64 {
        self.chiplet_count() as u64 * self.neuron_capacity_per_chiplet
    }

    pub fn total_synapse_capacity(&self) -> u64 {
        self.chiplet_count() as u64 * self.synapse_capacity_per_chiplet
    }

    /// Domain index (position in `sync_domains`) for every chiplet, by
    /// linear index. Only meaningful on a validated config.
    pub fn domain_of_chiplets(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.chiplet_count()];
        for (d, dom) in self.sync_domains.iter().enumerate() {
            for &m in &dom.members {
                if self.contains(m) {
                    out[self.index_of(m)] = d;
                }
            }
        }
        out
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("WaferConfig always serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: WaferConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if cfg.sync_domains.is_empty() {
            cfg.sync_domains = default_partition(cfg.grid_width, cfg.grid_height);
        }
        let violations = validate_config(&cfg);
        if violations.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(violations))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    /// TOML errors carry line and column in their message.
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid config: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

pub fn load_config(path: impl AsRef<Path>) -> Result<WaferConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    WaferConfig::from_toml_str(&text)
}

pub fn save_config(cfg: &WaferConfig, path: impl AsRef<Path>) -> std::io::Result<()> {
    std::fs::write(path, cfg.to_toml_string())
}

/// Checks every structural invariant; an empty result means the config is
/// usable.
pub fn validate_config(cfg: &WaferConfig) -> Vec<Violation> {
    let mut out = Vec::new();

    if cfg.grid_width == 0 || cfg.grid_height == 0 {
        out.push(Violation::new("grid", "grid_width × grid_height must be ≥ 1"));
    }
    if cfg.grid_width > MAX_GRID_DIM || cfg.grid_height > MAX_GRID_DIM {
        out.push(Violation::new(
            "grid",
            format!("each dimension must be ≤ {MAX_GRID_DIM} (6-bit hop offsets)"),
        ));
    }

    let positive: [(&str, u64); 9] = [
        ("neuron_capacity_per_chiplet", cfg.neuron_capacity_per_chiplet),
        ("synapse_capacity_per_chiplet", cfg.synapse_capacity_per_chiplet),
        ("clock_hz", cfg.clock_hz),
        ("sops_per_cycle_per_chiplet", cfg.sops_per_cycle_per_chiplet),
        ("neuron_parallelism", cfg.neuron_parallelism),
        ("link_phase_cycles", cfg.link_phase_cycles),
        ("link_fifo_depth", cfg.link_fifo_depth as u64),
        ("step_policy.initial_budget", cfg.step_policy.initial_budget),
        ("step_policy.min_budget", cfg.step_policy.min_budget),
    ];
    for (field, value) in positive {
        if value == 0 {
            out.push(Violation::new(field, "must be strictly positive"));
        }
    }
    if cfg.step_policy.max_budget == 0 {
        out.push(Violation::new("step_policy.max_budget", "must be strictly positive"));
    }
    if cfg.neuron_capacity_per_chiplet > MAX_NEURONS_PER_CHIPLET {
        out.push(Violation::new(
            "neuron_capacity_per_chiplet",
            format!("must be ≤ {MAX_NEURONS_PER_CHIPLET} (22-bit neuron field)"),
        ));
    }
    if !(cfg.energy_per_sop_pj.is_finite() && cfg.energy_per_sop_pj >= 0.0) {
        out.push(Violation::new("energy_per_sop_pj", "must be finite and ≥ 0"));
    }
    if !(cfg.static_power_w.is_finite() && cfg.static_power_w >= 0.0) {
        out.push(Violation::new("static_power_w", "must be finite and ≥ 0"));
    }

    let p = &cfg.step_policy;
    if !(0.0..=1.0).contains(&p.smoothing) {
        out.push(Violation::new("step_policy.smoothing", "must lie in [0, 1]"));
    }
    if !(p.min_budget <= p.initial_budget && p.initial_budget <= p.max_budget) {
        out.push(Violation::new(
            "step_policy",
            "min_budget ≤ initial_budget ≤ max_budget required",
        ));
    }

    validate_domains(cfg, &mut out);
    out
}

fn validate_domains(cfg: &WaferConfig, out: &mut Vec<Violation>) {
    let masters = cfg.sync_domains.iter().filter(|d| d.global_master).count();
    if masters != 1 {
        out.push(Violation::new(
            "sync_domain.global_master",
            format!("exactly one domain must be global master, found {masters}"),
        ));
    }

    let mut ids = BTreeMap::new();
    for d in &cfg.sync_domains {
        *ids.entry(d.id).or_insert(0usize) += 1;
    }
    if ids.values().any(|&n| n > 1) {
        out.push(Violation::new("sync_domain.id", "domain ids must be unique"));
    }

    let mut owner: BTreeMap<ChipletCoord, u32> = BTreeMap::new();
    let mut overlap = false;
    for d in &cfg.sync_domains {
        for &m in &d.members {
            if !cfg.contains(m) {
                out.push(Violation::new(
                    format!("sync_domain[{}].members", d.id),
                    format!("coordinate {m} lies outside the grid"),
                ));
                continue;
            }
            if owner.insert(m, d.id).is_some() {
                overlap = true;
            }
        }
    }
    if overlap {
        out.push(Violation::new("sync_domain", "domains overlap"));
    }
    let missing = cfg.coords().filter(|c| !owner.contains_key(c)).count();
    if missing > 0 {
        out.push(Violation::new(
            "sync_domain",
            format!("domains omit {missing} chiplet(s)"),
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_matches_wafer_totals() {
        let cfg = WaferConfig::default();
        assert!(validate_config(&cfg).is_empty());
        assert_eq!(cfg.chiplet_count(), 64);
        assert_eq!(cfg.neuron_capacity_per_chiplet, 2_350_000);
        assert_eq!(cfg.synapse_capacity_per_chiplet, 100_000_000);
        assert_eq!(cfg.total_neuron_capacity(), 150_400_000);
        assert_eq!(cfg.total_synapse_capacity(), 6_400_000_000);
        assert_eq!(cfg.sync_domains.len(), 4);
        assert!(cfg.sync_domains.iter().all(|d| d.members.len() == 16));
        assert!(cfg.sync_domains[0].global_master);
    }

    #[test]
    fn out_of_grid_member_is_one_violation() {
        let mut cfg = WaferConfig::default();
        cfg.sync_domains[1].members.push(ChipletCoord::new(8, 0));
        let v = validate_config(&cfg);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].rule.contains("outside the grid"));
    }

    #[test]
    fn two_masters_is_one_violation() {
        let mut cfg = WaferConfig::default();
        cfg.sync_domains[2].global_master = true;
        let v = validate_config(&cfg);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].field, "sync_domain.global_master");
    }

    #[test]
    fn overlapping_domains_rejected() {
        let mut cfg = WaferConfig::default();
        let stolen = cfg.sync_domains[0].members[0];
        cfg.sync_domains[1].members.push(stolen);
        let v = validate_config(&cfg);
        assert!(v.iter().any(|v| v.rule == "domains overlap"), "{v:?}");
    }

    #[test]
    fn omission_and_bad_policy_reported() {
        let mut cfg = WaferConfig::default();
        cfg.sync_domains[3].members.pop();
        cfg.step_policy.smoothing = 1.5;
        cfg.link_phase_cycles = 0;
        let v = validate_config(&cfg);
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = WaferConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, WaferConfig::default());
    }

    #[test]
    fn single_chiplet_file() {
        let text = "grid_width = 1\ngrid_height = 1\n\n[[sync_domain]]\nid = 0\nglobal_master = true\nmembers = [[0, 0]]\n";
        let cfg = WaferConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.chiplet_count(), 1);
        assert_eq!(cfg.sync_domains.len(), 1);
    }

    #[test]
    fn overlapping_file_reports_overlap() {
        let text = "grid_width = 2\ngrid_height = 1\n\n\
            [[sync_domain]]\nid = 0\nglobal_master = true\nmembers = [[0, 0], [1, 0]]\n\n\
            [[sync_domain]]\nid = 1\nmembers = [[1, 0]]\n";
        let err = WaferConfig::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("domains overlap"), "{err}");
    }

    #[test]
    fn unknown_field_is_parse_error_with_line() {
        let err = WaferConfig::from_toml_str("grid_width = 4\ngrid_wdith = 4\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, ConfigError::Parse(_)));
        assert!(msg.contains("line 2") && msg.contains("grid_wdith"), "{msg}");
    }

    #[test]
    fn default_partition_covers_odd_grids() {
        let cfg = WaferConfig::with_grid(5, 3);
        assert!(validate_config(&cfg).is_empty());
        assert_eq!(cfg.sync_domains.len(), 2);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wafer.toml");
        let mut cfg = WaferConfig::with_grid(3, 2);
        cfg.static_power_w = 12.5;
        cfg.step_policy.smoothing = 0.25;
        save_config(&cfg, &path).unwrap();
        let back = load_config(&path).unwrap();
        assert_eq!(back, cfg);
        save_config(&back, &path).unwrap();
        assert_eq!(load_config(&path).unwrap(), cfg);
    }
}
