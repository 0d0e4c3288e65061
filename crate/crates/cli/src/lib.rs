//! `wafersim` command-line front end.
//!
//! Exit codes: 0 success, 1 output I/O failure, 2 usage, 3 validation,
//! 4 infeasible, 5 protocol. Failures print one line,
//! `error[<class>]: <detail>`, on stderr.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use wafersim_core::config::{load_config, validate_config, ConfigError, WaferConfig};
use wafersim_core::ibplanner::{
    assign_nets, build_bump_plan, check_floorplan, enumerate_paths, estimate_parasitics, feedback_text,
    Algorithm, Geometry, Netlist, PlanError, WireModel,
};
use wafersim_core::kernel::{compute_metrics, run_with, RunOptions, SimError, SimReport};
use wafersim_core::mapper::{
    map_connectome, map_network, reconstruct_connectivity, spearman, synthesize_network, Connectome, MapperError,
    RefineOptions, WeightRange,
};
use wafersim_core::network::{FormatError, PlacedNetwork, SpikeTrace, Stimulus};
use wafersim_core::neuron::NeuronParams;

/// Output directory override for relative output paths.
pub const OUT_DIR_ENV: &str = "WAFERSIM_OUT_DIR";

/// Above this many synapses `map` places by region totals only.
const MATERIALIZE_LIMIT: u64 = 50_000_000;

#[derive(Debug, Parser)]
#[command(name = "wafersim", version, about = "Wafer-scale neuromorphic simulator and planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a wafer config and list violations.
    Validate {
        /// Config TOML path, or `default`.
        #[arg(long)]
        config: String,
    },
    /// Run a placed network for a number of steps.
    Simulate(SimulateArgs),
    /// Synthesize a network from a connectome and place it on the wafer.
    Map(MapArgs),
    /// Assign die-to-die nets to interposer lanes.
    Plan(PlanArgs),
    /// Summarize a simulation report and its spike trace.
    Report {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value = "default")]
    config: String,
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    stimulus: Option<PathBuf>,
    #[arg(long)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output directory for report.toml, trace.txt, steps.txt and manifest.toml.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    packet_trace: bool,
}

#[derive(Debug, Args)]
struct MapArgs {
    #[arg(long)]
    connectome: PathBuf,
    #[arg(long, default_value = "default")]
    config: String,
    #[arg(long, default_value_t = 0.8)]
    utilization: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Independent copies placed together.
    #[arg(long, default_value_t = 1)]
    instances: u32,
    #[arg(long, default_value_t = 1)]
    weight_min: i16,
    #[arg(long, default_value_t = 16)]
    weight_max: i16,
    /// Compare diagonal entries too when scoring fidelity.
    #[arg(long)]
    include_diagonal: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Hungarian,
    Greedy,
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[arg(long)]
    netlist: PathBuf,
    #[arg(long)]
    geometry: PathBuf,
    #[arg(long, value_enum, default_value = "hungarian")]
    algorithm: AlgorithmArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    feedback: PathBuf,
    /// Lane pitch in mm.
    #[arg(long, default_value_t = 0.1)]
    pitch: f64,
    /// Lanes per adjacent chiplet pair.
    #[arg(long, default_value_t = 16)]
    fanout: usize,
    /// Peripheral band width in mm.
    #[arg(long, default_value_t = 0.5)]
    band: f64,
}

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Usage(String),
    Validation(String),
    Infeasible(String),
    Protocol(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::Protocol(_) => 5,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            CliError::Io(_) => "io",
            CliError::Usage(_) => "usage",
            CliError::Validation(_) => "validation",
            CliError::Infeasible(_) => "infeasible",
            CliError::Protocol(_) => "protocol",
        }
    }

    fn detail(&self) -> &str {
        match self {
            CliError::Io(s)
            | CliError::Usage(s)
            | CliError::Validation(s)
            | CliError::Infeasible(s)
            | CliError::Protocol(s) => s,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // Keep the message on one line.
        write!(f, "error[{}]: {}", self.class(), self.detail().replace('\n', " "))
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Neuron { .. } | SimError::Noc { .. } | SimError::Sync { .. } => CliError::Protocol(e.to_string()),
            SimError::Pool(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<MapperError> for CliError {
    fn from(e: MapperError) -> Self {
        match e {
            MapperError::Infeasible { .. } | MapperError::OversizedNeuron { .. } => CliError::Infeasible(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        if e.is_infeasible() {
            CliError::Infeasible(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()));
            return 2;
        }
    };
    match execute(cli.command) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}

fn execute(cmd: Command) -> Result<String, CliError> {
    match cmd {
        Command::Validate { config } => validate(&config),
        Command::Simulate(a) => simulate(a),
        Command::Map(a) => map(a),
        Command::Plan(a) => plan(a),
        Command::Report { trace, report } => report_cmd(&trace, &report),
    }
}

struct Inputs {
    entries: Vec<(String, String)>,
    hasher: Sha256,
}

impl Inputs {
    fn new() -> Self {
        Self {
            entries: Vec::new(),
            hasher: Sha256::new(),
        }
    }

    fn add(&mut self, label: &str, bytes: &[u8]) {
        self.hasher.update(bytes);
        self.entries.push((label.to_string(), hex(&Sha256::digest(bytes))));
    }

    fn read(&mut self, path: &Path) -> Result<String, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        self.add(&path.display().to_string(), text.as_bytes());
        Ok(text)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Serialize)]
struct ManifestInput {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    subcommand: String,
    tool_version: String,
    seed: u64,
    input_hash: String,
    timestamp: u64,
    inputs: Vec<ManifestInput>,
    outputs: Vec<String>,
}

/// Honors `SOURCE_DATE_EPOCH` so manifests can be reproduced too.
fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}

fn resolve_out(p: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if p.is_relative() => PathBuf::from(dir).join(p),
        _ => p.to_path_buf(),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Io(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_manifest(dir: &Path, subcommand: &str, seed: u64, inputs: Inputs, outputs: &[PathBuf]) -> Result<PathBuf, CliError> {
    let manifest = RunManifest {
        subcommand: subcommand.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        input_hash: hex(&inputs.hasher.finalize()),
        timestamp: timestamp(),
        inputs: inputs
            .entries
            .into_iter()
            .map(|(path, sha256)| ManifestInput { path, sha256 })
            .collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let path = dir.join("manifest.toml");
    let text = toml::to_string(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&path, &text)?;
    Ok(path)
}

fn config_from(source: &str, inputs: &mut Inputs) -> Result<WaferConfig, CliError> {
    if source == "default" {
        let cfg = WaferConfig::default();
        inputs.add("default", cfg.to_toml_string().as_bytes());
        return Ok(cfg);
    }
    let path = Path::new(source);
    let text = inputs.read(path)?;
    WaferConfig::from_toml_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn validate(source: &str) -> Result<String, CliError> {
    let cfg = if source == "default" {
        WaferConfig::default()
    } else {
        match load_config(source) {
            Ok(c) => c,
            Err(ConfigError::Invalid(v)) => {
                let lines: Vec<String> = v.iter().map(|v| v.to_string()).collect();
                return Err(CliError::Validation(format!(
                    "{source}: {} violation(s): {}",
                    v.len(),
                    lines.join("; ")
                )));
            }
            Err(e) => return Err(e.into()),
        }
    };
    debug_assert!(validate_config(&cfg).is_empty());
    Ok(format!(
        "ok: {}x{} grid, {} sync domain(s), 0 violations\n",
        cfg.grid_width,
        cfg.grid_height,
        cfg.sync_domains.len()
    ))
}

fn simulate(a: SimulateArgs) -> Result<String, CliError> {
    let mut inputs = Inputs::new();
    let cfg = config_from(&a.config, &mut inputs)?;
    let net_text = inputs.read(&a.network)?;
    let network = PlacedNetwork::from_text(&net_text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", a.network.display())))?;
    let stimulus = match &a.stimulus {
        Some(p) => {
            let t = inputs.read(p)?;
            Stimulus::from_text(&t).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?
        }
        None => Stimulus::default(),
    };
    if a.workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let opts = RunOptions {
        workers: a.workers,
        audit: false,
        packet_trace: a.packet_trace,
    };
    let out = run_with(&cfg, &network, &stimulus, a.steps, a.seed, opts)?;
    let report = if out.report.elapsed_cycles > 0 {
        compute_metrics(&out.report, &cfg)?
    } else {
        out.report
    };

    let dir = resolve_out(&a.out);
    let mut written = Vec::new();
    let mut emit = |name: &str, text: &str| -> Result<(), CliError> {
        let p = dir.join(name);
        write_file(&p, text)?;
        written.push(p);
        Ok(())
    };
    emit("report.toml", &report.to_toml_string())?;
    emit("trace.txt", &out.trace.to_text())?;
    let steps: String = report.step_log.iter().map(|r| r.to_line() + "\n").collect();
    emit("steps.txt", &format!("# step budget actual drain domain_completion\n{steps}"))?;
    if a.packet_trace {
        let lines: String = out.packets.iter().map(|p| p.to_line() + "\n").collect();
        emit(
            "packets.txt",
            &format!("# step_tag src_x src_y dst_x dst_y hops cycles relayed\n{lines}"),
        )?;
    }
    write_manifest(&dir, "simulate", a.seed, inputs, &written)?;
    Ok(format!(
        "simulated {} steps: {} SOPs, {} spikes, {} cycles -> {}\n",
        report.steps,
        report.total_sops,
        report.total_spikes,
        report.elapsed_cycles,
        dir.display()
    ))
}

fn map(a: MapArgs) -> Result<String, CliError> {
    let mut inputs = Inputs::new();
    let cfg = config_from(&a.config, &mut inputs)?;
    let text = inputs.read(&a.connectome)?;
    let connectome =
        Connectome::from_text(&text).map_err(|e| CliError::Validation(format!("{}: {e}", a.connectome.display())))?;
    if a.instances == 0 {
        return Err(CliError::Usage("--instances must be at least 1".into()));
    }
    let dir = resolve_out(&a.out);
    let mut written = Vec::new();
    let mut summary = String::new();
    let total = connectome.total_synapses * a.instances as u64;
    let _ = writeln!(
        summary,
        "connectome: {} regions, {} neurons, {} synapses (x{} instance(s))",
        connectome.regions.len(),
        connectome.neuron_count(),
        connectome.total_synapses,
        a.instances
    );

    if total > MATERIALIZE_LIMIT {
        if a.instances != 1 {
            return Err(CliError::Usage("--instances needs a connectome small enough to synthesize".into()));
        }
        let p = map_connectome(&connectome, &cfg, a.utilization)?;
        let mut s = String::from("# region start len x y\n");
        for span in &p.spans {
            let _ = writeln!(
                s,
                "{} {} {} {} {}",
                connectome.regions[span.region].name, span.start, span.len, span.chiplet.x, span.chiplet.y
            );
        }
        let path = dir.join("placement.txt");
        write_file(&path, &s)?;
        written.push(path);
        let _ = writeln!(summary, "placed by region totals on {} chiplet(s)", p.chiplets_used());
    } else {
        let weights = WeightRange {
            min: a.weight_min,
            max: a.weight_max,
        };
        let first = synthesize_network(&connectome, a.seed, weights, NeuronParams::default())?;
        let fidelity = spearman(&connectome.weights, &reconstruct_connectivity(&first)?, !a.include_diagonal)?;
        let mut net = first;
        for i in 1..a.instances {
            let copy = synthesize_network(&connectome, a.seed.wrapping_add(i as u64), weights, NeuronParams::default())?;
            net = net.disjoint_union(&copy);
        }
        let placement = map_network(&net, &cfg, a.utilization, RefineOptions::default())?;
        placement
            .check(&net, &cfg, a.utilization)
            .map_err(|e| CliError::Protocol(format!("placement check failed: {e}")))?;
        for (name, body) in [
            ("network.txt", placement.apply(&net).to_text()),
            ("placement.txt", placement.to_text()),
            ("fidelity.txt", fidelity.to_text()),
        ] {
            let path = dir.join(name);
            write_file(&path, &body)?;
            written.push(path);
        }
        let _ = writeln!(
            summary,
            "placed on {} chiplet(s); inter-chiplet synapses {} -> {} after {} swap(s); spearman r = {:.4}",
            placement.chiplets_used(),
            placement.cut_before_refine,
            placement.cut_after_refine,
            placement.swaps,
            fidelity.spearman_r
        );
    }
    write_manifest(&dir, "map", a.seed, inputs, &written)?;
    let _ = writeln!(summary, "outputs in {}", dir.display());
    Ok(summary)
}

fn plan(a: PlanArgs) -> Result<String, CliError> {
    let mut inputs = Inputs::new();
    let ntext = inputs.read(&a.netlist)?;
    let gtext = inputs.read(&a.geometry)?;
    let netlist = Netlist::from_text(&ntext).map_err(|e| CliError::Validation(format!("{}: {e}", a.netlist.display())))?;
    let geometry =
        Geometry::from_text(&gtext).map_err(|e| CliError::Validation(format!("{}: {e}", a.geometry.display())))?;
    let wire = WireModel::default();
    let paths = enumerate_paths(&geometry, a.pitch, a.fanout, &wire)?;
    let algorithm = match a.algorithm {
        AlgorithmArg::Hungarian => Algorithm::Hungarian,
        AlgorithmArg::Greedy => Algorithm::Greedy,
    };
    let assignment = assign_nets(&netlist, &geometry, &paths, algorithm)?;
    let loads = estimate_parasitics(&assignment, &netlist, &wire);
    let bumps = build_bump_plan(&geometry, &netlist, &paths, &assignment, a.band, 0.2);
    let violations = check_floorplan(&bumps);

    let out = resolve_out(&a.out);
    let feedback = resolve_out(&a.feedback);
    let mut body = assignment.to_text(&netlist, &paths);
    for v in &violations {
        let _ = writeln!(body, "# violation {v}");
    }
    write_file(&out, &body)?;
    write_file(&feedback, &feedback_text(&loads))?;
    let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
    write_manifest(&dir, "plan", 0, inputs, &[out.clone(), feedback.clone()])?;
    Ok(format!(
        "assigned {} signal net(s), total length {:.3} mm, {} floorplan violation(s)\n",
        assignment.entries.len(),
        assignment.total_length_mm(),
        violations.len()
    ))
}

/// Renders the summary printed by `report`.
pub fn render_report(report: &SimReport, trace: &SpikeTrace) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "steps            {}", report.steps);
    let _ = writeln!(s, "synaptic ops     {}", report.total_sops);
    let _ = writeln!(s, "spikes           {} (trace: {})", report.total_spikes, trace.len());
    let _ = writeln!(s, "packets          {} injected, {} relayed", report.events_injected, report.relayed_events);
    let _ = writeln!(s, "model cycles     {}", report.elapsed_cycles);
    match &report.metrics {
        Some(m) => {
            let _ = writeln!(s, "energy           {:.6e} J", m.total_energy_j);
            let _ = writeln!(s, "throughput       {:.6e} SOP/s", m.throughput_sops);
            let _ = writeln!(s, "efficiency       {:.6e} SOP/s/W", m.efficiency_sops_per_w);
        }
        None => {
            let _ = writeln!(s, "energy           0 J");
            let _ = writeln!(s, "throughput       0 SOP/s");
        }
    }
    let occupied: Vec<_> = report.chiplets.iter().filter(|c| c.neurons > 0).collect();
    let _ = writeln!(s, "occupied chiplets {}", occupied.len());
    let _ = writeln!(s, "  chiplet   neurons    synapses        sops    spikes  sop_share");
    for c in &occupied {
        let share = if report.total_sops == 0 {
            0.0
        } else {
            c.sops as f64 / report.total_sops as f64
        };
        let _ = writeln!(
            s,
            "  ({:>2},{:>2}) {:>9} {:>11} {:>11} {:>9} {:>9.3}",
            c.x, c.y, c.neurons, c.synapses, c.sops, c.spikes, share
        );
    }
    let _ = writeln!(s, "step budgets (step budget actual drain)");
    for r in &report.step_log {
        let _ = writeln!(s, "  {} {} {} {}", r.step, r.budget, r.actual, r.drain);
    }
    s
}

fn report_cmd(trace_path: &Path, report_path: &Path) -> Result<String, CliError> {
    let trace = SpikeTrace::load(trace_path).map_err(|e| CliError::Validation(format!("malformed trace: {e}")))?;
    let text = std::fs::read_to_string(report_path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", report_path.display())))?;
    let report = SimReport::from_toml_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", report_path.display())))?;
    Ok(render_report(&report, &trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_lines_are_single_line_with_class() {
        let e = CliError::Infeasible("blocking nets: a,\nb".into());
        assert_eq!(e.to_string(), "error[infeasible]: blocking nets: a, b");
        assert_eq!(e.code(), 4);
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(dispatch(["wafersim", "validate", "--bogus"]), 2);
        assert_eq!(dispatch(["wafersim", "validate", "--config", "default"]), 0);
    }

    #[test]
    fn empty_report_is_all_zero() {
        let report = SimReport {
            steps: 0,
            total_sops: 0,
            total_spikes: 0,
            events_injected: 0,
            events_delivered: 0,
            relayed_events: 0,
            elapsed_cycles: 0,
            saturations: 0,
            chiplets: vec![],
            step_log: vec![],
            metrics: None,
        };
        let text = render_report(&report, &SpikeTrace::default());
        assert!(text.contains("synaptic ops     0"));
        assert!(text.contains("occupied chiplets 0"));
    }
}
