//! The step loop that binds neuron cores, the mesh and the barrier, plus the
//! single-threaded golden reference and the energy/throughput model.
//!
//! Each step: stimulus is added to the accumulators, every core updates and
//! fans out (in parallel across chiplets; local targets are delivered on the
//! spot), then a discrete-event pass replays the step on the model clock:
//! compute completions inject packets, packets cross the mesh, deliveries
//! land in the destination accumulators, and the barrier closes once the
//! wafer is quiescent. Spikes never depend on timing because accumulation is
//! plain integer addition, which is what makes the golden reference a valid
//! oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aer::{step_tag_of, AerEvent};
use crate::config::{validate_config, ChipletCoord, Violation, WaferConfig};
use crate::des::EventQueue;
use crate::network::{PlacedNetwork, SpikeRecord, SpikeTrace, Stimulus};
use crate::neuron::{CoreState, NeuronError, NeuronState};
use crate::noc::{Delivery, Mesh, NocError, NocParams, Port};
use crate::sync::{StepRecord, SyncError, SyncState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Config(Vec<Violation>),
    #[error("network grid {net_w}x{net_h} does not match config grid {cfg_w}x{cfg_h}")]
    GridMismatch {
        net_w: u32,
        net_h: u32,
        cfg_w: u32,
        cfg_h: u32,
    },
    #[error("capacity violation on chiplet {chiplet}: {count} {what} exceed capacity {capacity}")]
    Capacity {
        chiplet: ChipletCoord,
        what: &'static str,
        count: u64,
        capacity: u64,
    },
    #[error("invalid network: chiplet {chiplet} neuron {src} targets neuron {dst_neuron} on {dst}, which holds {count}")]
    DanglingSynapse {
        chiplet: ChipletCoord,
        src: usize,
        dst: ChipletCoord,
        dst_neuron: u32,
        count: usize,
    },
    #[error("invalid stimulus at step {step}: chiplet {chiplet} neuron {neuron} does not exist")]
    Stimulus {
        step: u64,
        chiplet: ChipletCoord,
        neuron: u32,
    },
    #[error("step {step}: {source}")]
    Neuron { step: u64, source: NeuronError },
    #[error("step {step}: {source}")]
    Noc { step: u64, source: NocError },
    #[error("step {step}: protocol error: {source}")]
    Sync { step: u64, source: SyncError },
    #[error("undefined rate: elapsed model time is zero")]
    UndefinedRate,
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
    /// Record phase/barrier ordering and scan the mesh at every barrier.
    pub audit: bool,
    pub packet_trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            audit: cfg!(debug_assertions),
            packet_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChipletStats {
    pub x: u32,
    pub y: u32,
    pub neurons: u64,
    pub synapses: u64,
    pub sops: u64,
    pub spikes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub dynamic_energy_j: f64,
    pub static_energy_j: f64,
    pub total_energy_j: f64,
    pub model_time_s: f64,
    pub throughput_sops: f64,
    pub efficiency_sops_per_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub steps: u64,
    pub total_sops: u64,
    pub total_spikes: u64,
    pub events_injected: u64,
    pub events_delivered: u64,
    pub relayed_events: u64,
    pub elapsed_cycles: u64,
    pub saturations: u64,
    pub chiplets: Vec<ChipletStats>,
    pub step_log: Vec<StepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
}

impl SimReport {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("SimReport always serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

/// One packet delivery, for the optional packet trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketRecord {
    pub step_tag: u16,
    pub src: ChipletCoord,
    pub dst: ChipletCoord,
    pub hops: u32,
    pub cycles_in_flight: u64,
    pub relayed: bool,
}

impl PacketRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {} {} {} {} {}",
            self.step_tag,
            self.src.x,
            self.src.y,
            self.dst.x,
            self.dst.y,
            self.hops,
            self.cycles_in_flight,
            self.relayed as u8,
            ""
        )
        .trim_end()
        .to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditEntry {
    PhaseStart { step: u64, chiplet: usize, cycle: u64 },
    Advance { step: u64, cycle: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditLog {
    pub entries: Vec<AuditEntry>,
    /// Packets tagged with step t still buffered when barrier t closed.
    pub survivors: Vec<(u64, usize)>,
}

impl AuditLog {
    /// Neuron phases of step t+1 that precede the close of barrier t, either
    /// in log order or on the model clock.
    pub fn barrier_violations(&self) -> usize {
        let mut advanced: Vec<Option<u64>> = Vec::new();
        let mut bad = 0;
        for e in &self.entries {
            match *e {
                AuditEntry::Advance { step, cycle } => {
                    let s = step as usize;
                    if advanced.len() <= s {
                        advanced.resize(s + 1, None);
                    }
                    advanced[s] = Some(cycle);
                }
                AuditEntry::PhaseStart { step, cycle, .. } => {
                    if step == 0 {
                        continue;
                    }
                    match advanced.get(step as usize - 1).copied().flatten() {
                        Some(c) if c <= cycle => {}
                        _ => bad += 1,
                    }
                }
            }
        }
        bad
    }

    pub fn surviving_packets(&self) -> usize {
        self.survivors.iter().map(|&(_, n)| n).sum()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: SimReport,
    pub trace: SpikeTrace,
    pub audit: Option<AuditLog>,
    pub packets: Vec<PacketRecord>,
}

/// Runs with default options and returns the report and spike trace.
pub fn run(
    cfg: &WaferConfig,
    network: &PlacedNetwork,
    stimulus: &Stimulus,
    steps: u64,
    seed: u64,
) -> Result<(SimReport, SpikeTrace), SimError> {
    let out = run_with(cfg, network, stimulus, steps, seed, RunOptions::default())?;
    Ok((out.report, out.trace))
}

/// Checks that every synapse and stimulus entry addresses an existing neuron.
pub fn validate_inputs(
    network: &PlacedNetwork,
    stimulus: &Stimulus,
) -> Result<(), SimError> {
    let counts: Vec<usize> = network.chiplets.iter().map(|c| c.neuron_count()).collect();
    for (i, block) in network.chiplets.iter().enumerate() {
        for src in 0..block.neuron_count() {
            for e in block.synapses.row(src) {
                let d = e.dst_chiplet as usize;
                if d >= counts.len() || e.dst_neuron as usize >= counts[d] {
                    return Err(SimError::DanglingSynapse {
                        chiplet: network.coord_of(i),
                        src,
                        dst: network.coord_of(d),
                        dst_neuron: e.dst_neuron,
                        count: counts.get(d).copied().unwrap_or(0),
                    });
                }
            }
        }
    }
    for e in stimulus.entries() {
        let ok = e.chiplet.x < network.grid_width
            && e.chiplet.y < network.grid_height
            && (e.neuron as usize) < counts[network.index_of(e.chiplet)];
        if !ok {
            return Err(SimError::Stimulus {
                step: e.step,
                chiplet: e.chiplet,
                neuron: e.neuron,
            });
        }
    }
    Ok(())
}

fn check_placement(cfg: &WaferConfig, network: &PlacedNetwork) -> Result<(), SimError> {
    if network.grid_width != cfg.grid_width || network.grid_height != cfg.grid_height {
        return Err(SimError::GridMismatch {
            net_w: network.grid_width,
            net_h: network.grid_height,
            cfg_w: cfg.grid_width,
            cfg_h: cfg.grid_height,
        });
    }
    for (i, block) in network.chiplets.iter().enumerate() {
        let checks = [
            ("neurons", block.neuron_count() as u64, cfg.neuron_capacity_per_chiplet),
            ("synapses", block.synapses.len() as u64, cfg.synapse_capacity_per_chiplet),
        ];
        for (what, count, capacity) in checks {
            if count > capacity {
                return Err(SimError::Capacity {
                    chiplet: cfg.coord_of(i),
                    what,
                    count,
                    capacity,
                });
            }
        }
    }
    Ok(())
}

struct ComputeOut {
    spikes: Vec<u32>,
    events: Vec<AerEvent>,
    cycles: u64,
}

/// Compute-phase length: neuron updates across the lanes plus synaptic
/// events walked by the fan-out.
pub fn compute_cycles(cfg: &WaferConfig, neurons: u64, synaptic_events: u64) -> u64 {
    neurons.div_ceil(cfg.neuron_parallelism) + synaptic_events.div_ceil(cfg.sops_per_cycle_per_chiplet)
}

fn compute_core(core: &mut CoreState, step: u64, cfg: &WaferConfig) -> Result<ComputeOut, NeuronError> {
    let spikes = core.step_neurons();
    let mut events = Vec::new();
    let mut walked = 0u64;
    for &s in &spikes {
        let before = events.len();
        let local = core.fanout_into(s, step, &mut events)?;
        walked += (local + events.len() - before) as u64;
    }
    Ok(ComputeOut {
        spikes,
        events,
        cycles: compute_cycles(cfg, core.neuron_count() as u64, walked),
    })
}

#[derive(Debug, Clone, Copy)]
enum SimEvent {
    NeuronPhase(usize),
    LinkArrival(usize, Port),
    ControllerMsg,
}

pub fn run_with(
    cfg: &WaferConfig,
    network: &PlacedNetwork,
    stimulus: &Stimulus,
    steps: u64,
    seed: u64,
    opts: RunOptions,
) -> Result<RunOutput, SimError> {
    let violations = validate_config(cfg);
    if !violations.is_empty() {
        return Err(SimError::Config(violations));
    }
    check_placement(cfg, network)?;
    validate_inputs(network, stimulus)?;

    let mut cores: Vec<CoreState> = network
        .chiplets
        .iter()
        .enumerate()
        .map(|(i, b)| {
            CoreState::new(
                cfg.coord_of(i),
                cfg.grid_width,
                b.params.iter().map(NeuronState::new).collect(),
                b.synapses.clone(),
            )
        })
        .collect();
    let n = cores.len();
    let mut mesh = Mesh::new(cfg.grid_width, cfg.grid_height, NocParams::from_config(cfg), seed);
    let mut sync = SyncState::new(cfg);
    let domains = cfg.sync_domains.len();
    let pool = if opts.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(opts.workers)
                .build()
                .map_err(|e| SimError::Pool(e.to_string()))?,
        )
    } else {
        None
    };

    let mut spikes = Vec::new();
    let mut step_log = Vec::with_capacity(steps as usize);
    let mut audit = opts.audit.then(AuditLog::default);
    let mut packets = Vec::new();
    let mut cycle = 0u64;
    let mut deliveries: Vec<Delivery> = Vec::new();

    for step in 0..steps {
        let start = cycle;
        for e in stimulus.at(step) {
            let i = cfg.index_of(e.chiplet);
            cores[i]
                .inject_input(e.neuron, e.weight)
                .map_err(|source| SimError::Neuron { step, source })?;
        }
        if let Some(a) = audit.as_mut() {
            a.entries.extend((0..n).map(|chiplet| AuditEntry::PhaseStart {
                step,
                chiplet,
                cycle: start,
            }));
        }

        let mut outs: Vec<ComputeOut> = match &pool {
            Some(p) => p.install(|| {
                cores
                    .par_iter_mut()
                    .map(|c| compute_core(c, step, cfg))
                    .collect::<Result<_, _>>()
            }),
            None => cores.iter_mut().map(|c| compute_core(c, step, cfg)).collect(),
        }
        .map_err(|source| SimError::Neuron { step, source })?;

        for (i, o) in outs.iter().enumerate() {
            let chiplet = cfg.coord_of(i);
            spikes.extend(o.spikes.iter().map(|&neuron| SpikeRecord {
                step,
                chiplet,
                neuron,
            }));
        }

        let mut queue = EventQueue::new();
        for (i, o) in outs.iter().enumerate() {
            queue.schedule(start + o.cycles, SimEvent::NeuronPhase(i));
        }
        let mut domain_done = vec![0u64; domains];
        let mut last_compute = start;
        let mut barrier_at = None;
        let mut quiescence_signalled = false;
        let noc_err = |source| SimError::Noc { step, source };
        let sync_err = |source| SimError::Sync { step, source };

        while let Some((at, ev)) = queue.pop() {
            let now = at.cycle;
            let mut arrivals = Vec::new();
            let mut sched = |c: u64, r: usize, p: Port| arrivals.push((c, r, p));
            match ev {
                SimEvent::NeuronPhase(i) => {
                    let coord = cfg.coord_of(i);
                    let cycles = outs[i].cycles;
                    sync.member_done(i, coord, cycles).map_err(sync_err)?;
                    let d = sync.domain_of(i);
                    domain_done[d] = domain_done[d].max(cycles);
                    last_compute = last_compute.max(now);
                    for e in std::mem::take(&mut outs[i].events) {
                        sync.injected(i).map_err(sync_err)?;
                        mesh.inject(now, coord, e).map_err(noc_err)?;
                    }
                    mesh.flush(now, &mut sched, &mut deliveries).map_err(noc_err)?;
                }
                SimEvent::LinkArrival(r, p) => {
                    mesh.on_link_arrival(now, r, p, &mut sched, &mut deliveries)
                        .map_err(noc_err)?;
                }
                SimEvent::ControllerMsg => {
                    sync.report_domains().map_err(sync_err)?;
                    barrier_at = Some(now);
                    break;
                }
            }
            for d in deliveries.drain(..) {
                let j = cfg.index_of(d.dst);
                cores[j]
                    .deliver_event(d.event.dst_neuron, d.event.weight)
                    .map_err(|source| SimError::Neuron { step, source })?;
                sync.delivered(j).map_err(sync_err)?;
                let dom = sync.domain_of(j);
                domain_done[dom] = domain_done[dom].max(now - start);
                if opts.packet_trace {
                    packets.push(PacketRecord {
                        step_tag: d.event.step_tag,
                        src: d.src,
                        dst: d.dst,
                        hops: d.hops,
                        cycles_in_flight: d.delivered_at - d.injected_at,
                        relayed: d.event.relayed,
                    });
                }
            }
            for (c, r, p) in arrivals {
                queue.schedule(c, SimEvent::LinkArrival(r, p));
            }
            if !quiescence_signalled && sync.quiescent() {
                quiescence_signalled = true;
                queue.schedule(now, SimEvent::ControllerMsg);
            }
        }

        let Some(barrier_at) = barrier_at else {
            return Err(SimError::Noc {
                step,
                source: NocError::Undrained {
                    stuck: mesh.in_network(),
                },
            });
        };
        if let Some(a) = audit.as_mut() {
            a.survivors.push((step, mesh.count_with_tag(step_tag_of(step))));
            debug_assert_eq!(mesh.buffered_count(), 0);
        }

        let actual = domain_done.iter().copied().max().unwrap_or(0);
        let record = StepRecord {
            step,
            budget: sync.global.budget,
            actual,
            drain: barrier_at - last_compute,
            domain_completion: domain_done,
        };
        sync.advance(actual).map_err(sync_err)?;
        if let Some(a) = audit.as_mut() {
            a.entries.push(AuditEntry::Advance {
                step,
                cycle: barrier_at,
            });
        }
        cycle = start + record.occupied_cycles();
        step_log.push(record);
    }

    let chiplets: Vec<ChipletStats> = cores
        .iter()
        .map(|c| ChipletStats {
            x: c.coord.x,
            y: c.coord.y,
            neurons: c.neuron_count() as u64,
            synapses: c.synapses.len() as u64,
            sops: c.sops,
            spikes: c.spikes,
        })
        .collect();
    let report = SimReport {
        steps,
        total_sops: chiplets.iter().map(|c| c.sops).sum(),
        total_spikes: chiplets.iter().map(|c| c.spikes).sum(),
        events_injected: mesh.injected,
        events_delivered: mesh.delivered,
        relayed_events: mesh.relayed,
        elapsed_cycles: cycle,
        saturations: cores.iter().map(|c| c.saturations).sum(),
        chiplets,
        step_log,
        metrics: None,
    };
    Ok(RunOutput {
        report,
        trace: SpikeTrace::new(spikes),
        audit,
        packets,
    })
}

/// Reference semantics: no mesh, no barrier, no timing. Each step applies
/// stimulus, updates every neuron in index order, then adds every spike's
/// weights straight into the targets' pending input.
pub fn golden_run(
    network: &PlacedNetwork,
    stimulus: &Stimulus,
    steps: u64,
) -> Result<SpikeTrace, SimError> {
    validate_inputs(network, stimulus)?;
    let mut state: Vec<Vec<NeuronState>> = network
        .chiplets
        .iter()
        .map(|b| b.params.iter().map(NeuronState::new).collect())
        .collect();
    let mut pending: Vec<Vec<i64>> = state.iter().map(|s| vec![0i64; s.len()]).collect();
    let mut records = Vec::new();
    let mut fired: Vec<(usize, usize)> = Vec::new();

    for step in 0..steps {
        for e in stimulus.at(step) {
            let slot = &mut pending[network.index_of(e.chiplet)][e.neuron as usize];
            *slot = slot.saturating_add(e.weight);
        }
        fired.clear();
        for (c, neurons) in state.iter_mut().enumerate() {
            for (k, neuron) in neurons.iter_mut().enumerate() {
                let input = std::mem::take(&mut pending[c][k]);
                if neuron.update(input).0 {
                    fired.push((c, k));
                    records.push(SpikeRecord {
                        step,
                        chiplet: network.coord_of(c),
                        neuron: k as u32,
                    });
                }
            }
        }
        for &(c, k) in &fired {
            for e in network.chiplets[c].synapses.row(k) {
                let slot = &mut pending[e.dst_chiplet as usize][e.dst_neuron as usize];
                *slot = slot.saturating_add(e.weight as i64);
            }
        }
    }
    Ok(SpikeTrace::new(records))
}

/// Fills the energy and throughput fields from the report's counters.
pub fn compute_metrics(report: &SimReport, cfg: &WaferConfig) -> Result<SimReport, SimError> {
    if report.elapsed_cycles == 0 {
        return Err(SimError::UndefinedRate);
    }
    let sops = report.total_sops as f64;
    let model_time_s = report.elapsed_cycles as f64 / cfg.clock_hz as f64;
    let dynamic_energy_j = sops * cfg.energy_per_sop_pj * 1e-12;
    let static_energy_j = cfg.static_power_w * model_time_s;
    let total_energy_j = dynamic_energy_j + static_energy_j;
    let throughput_sops = sops / model_time_s;
    let power_w = total_energy_j / model_time_s;
    let efficiency_sops_per_w = if power_w != 0.0 {
        throughput_sops / power_w
    } else if throughput_sops == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let mut out = report.clone();
    out.metrics = Some(Metrics {
        dynamic_energy_j,
        static_energy_j,
        total_energy_j,
        model_time_s,
        throughput_sops,
        efficiency_sops_per_w,
    });
    Ok(out)
}

/// Every chiplet processing its full SOP rate every cycle.
pub fn peak_throughput_sops(cfg: &WaferConfig) -> f64 {
    cfg.chiplet_count() as f64 * cfg.sops_per_cycle_per_chiplet as f64 * cfg.clock_hz as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::{NeuronParams, SynapseEntry, SynapseTable};

    fn one_neuron_remote(cfg: &WaferConfig) -> PlacedNetwork {
        let mut net = PlacedNetwork::empty(cfg.grid_width, cfg.grid_height);
        let p = NeuronParams {
            threshold: 10,
            reset: 0,
            leak_num: 1,
            leak_den: 1,
            refractory_period: 0,
        };
        net.chiplets[0].params = vec![p];
        net.chiplets[0].synapses = SynapseTable::from_pairs(
            1,
            vec![(
                0,
                SynapseEntry {
                    dst_neuron: 0,
                    dst_chiplet: 3,
                    weight: 1,
                },
            )],
        );
        net.chiplets[3].params = vec![p];
        net.chiplets[3].synapses = SynapseTable::empty(1);
        net
    }

    #[test]
    fn empty_network_runs_vacuously() {
        let cfg = WaferConfig::with_grid(2, 2);
        let net = PlacedNetwork::empty(2, 2);
        let (report, trace) = run(&cfg, &net, &Stimulus::default(), 10, 0).unwrap();
        assert!(trace.is_empty());
        assert_eq!(report.total_sops, 0);
        assert_eq!(report.step_log.len(), 10);
        assert!(report.step_log.iter().all(|r| r.actual == 0));
    }

    #[test]
    fn minimal_remote_pipeline() {
        let cfg = WaferConfig::with_grid(2, 2);
        let net = one_neuron_remote(&cfg);
        let stim = Stimulus::new(vec![crate::network::StimulusEntry {
            step: 0,
            chiplet: ChipletCoord::new(0, 0),
            neuron: 0,
            weight: 10,
        }]);
        let out = run_with(&cfg, &net, &stim, 3, 0, RunOptions { packet_trace: true, audit: true, ..Default::default() }).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.report.total_sops, 1);
        assert_eq!(out.report.events_injected, 1);
        assert_eq!(out.report.events_delivered, 1);
        assert_eq!(out.packets.len(), 1);
        let p = out.packets[0];
        assert_eq!(p.hops, 2);
        assert!(p.cycles_in_flight >= 8);
        // compute = ceil(1/1024) + ceil(1/3003) = 2 cycles, then 2 hops of 4.
        assert_eq!(out.report.step_log[0].actual, 10);
        assert_eq!(out.report.step_log[0].drain, 8);
        let audit = out.audit.unwrap();
        assert_eq!(audit.barrier_violations(), 0);
        assert_eq!(audit.surviving_packets(), 0);
        assert_eq!(golden_run(&net, &stim, 3).unwrap(), out.trace);
    }

    #[test]
    fn capacity_is_enforced() {
        let mut cfg = WaferConfig::with_grid(2, 2);
        cfg.neuron_capacity_per_chiplet = 1;
        let mut net = one_neuron_remote(&cfg);
        net.chiplets[1].params = vec![NeuronParams::default(); 2];
        net.chiplets[1].synapses = SynapseTable::empty(2);
        let err = run(&cfg, &net, &Stimulus::default(), 1, 0).unwrap_err();
        assert!(matches!(err, SimError::Capacity { what: "neurons", count: 2, .. }));
    }

    #[test]
    fn dangling_synapse_rejected_before_running() {
        let cfg = WaferConfig::with_grid(2, 2);
        let mut net = one_neuron_remote(&cfg);
        net.chiplets[3].params.clear();
        net.chiplets[3].synapses = SynapseTable::empty(0);
        assert!(matches!(
            run(&cfg, &net, &Stimulus::default(), 1, 0),
            Err(SimError::DanglingSynapse { .. })
        ));
        assert!(golden_run(&net, &Stimulus::default(), 1).is_err());
    }

    #[test]
    fn metrics_energy_and_rate() {
        let cfg = WaferConfig::default();
        let mut report = run(&cfg, &PlacedNetwork::empty(8, 8), &Stimulus::default(), 1, 0)
            .unwrap()
            .0;
        report.total_sops = 1_000_000_000;
        report.elapsed_cycles = 333_000_000;
        let m = compute_metrics(&report, &cfg).unwrap().metrics.unwrap();
        assert!((m.dynamic_energy_j - 4.9e-3).abs() < 1e-15);
        assert!((m.model_time_s - 1.0).abs() < 1e-12);
        assert!((m.throughput_sops - 1e9).abs() < 1e-3);

        report.total_sops = 0;
        let m = compute_metrics(&report, &cfg).unwrap().metrics.unwrap();
        assert_eq!(m.total_energy_j, 0.0);
        assert_eq!(m.efficiency_sops_per_w, 0.0);

        report.elapsed_cycles = 0;
        assert!(matches!(compute_metrics(&report, &cfg), Err(SimError::UndefinedRate)));
    }

    #[test]
    fn report_toml_round_trip() {
        let cfg = WaferConfig::with_grid(2, 2);
        let net = one_neuron_remote(&cfg);
        let (report, _) = run(&cfg, &net, &Stimulus::default(), 2, 0).unwrap();
        let report = compute_metrics(&report, &cfg).unwrap();
        let back = SimReport::from_toml_str(&report.to_toml_string()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn default_peak_is_64_tsops() {
        let peak = peak_throughput_sops(&WaferConfig::default());
        assert!((peak / 64e12 - 1.0).abs() < 2e-3);
    }
}
