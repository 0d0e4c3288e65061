mod common;

use proptest::prelude::*;

use common::{random_scenario, Shape};
use wafersim_core::aer::{AerEvent, VirtualChannel};
use wafersim_core::config::{validate_config, ChipletCoord, StepPolicy, WaferConfig};
use wafersim_core::des::EventQueue;
use wafersim_core::ibplanner::{enumerate_paths, hungarian, ChipletRect, Geometry, WireModel};
use wafersim_core::kernel::{golden_run, run_with, RunOptions};
use wafersim_core::mapper::{
    average_ranks, inter_chiplet_synapses, map_network, spearman, synthesize_network, Connectome, RefineOptions,
    Region, WeightRange,
};
use wafersim_core::neuron::NeuronParams;
use wafersim_core::noc::{run_traffic, NocParams, RelayRule};
use wafersim_core::sync::next_budget;

#[test]
fn default_wafer_totals() {
    let cfg = WaferConfig::default();
    assert_eq!(cfg.chiplet_count(), 64);
    assert_eq!(cfg.total_neuron_capacity(), 150_400_000);
    assert_eq!(cfg.total_synapse_capacity(), 6_400_000_000);
    assert!(validate_config(&cfg).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn config_round_trips(w in 1u32..=16, h in 1u32..=16, depth in 1usize..64, relay in 0u32..8, seed in any::<u64>()) {
        let mut cfg = WaferConfig::with_grid(w, h);
        cfg.link_fifo_depth = depth;
        cfg.relay_threshold_hops = relay;
        cfg.step_policy.smoothing = (seed % 1000) as f64 / 1000.0;
        let back = WaferConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn event_queue_pops_in_total_order(cycles in prop::collection::vec(0u64..50, 0..200)) {
        let mut q = EventQueue::new();
        for (i, &c) in cycles.iter().enumerate() {
            q.schedule(c, i);
        }
        let mut last = None;
        while let Some((at, i)) = q.pop() {
            prop_assert_eq!(at.cycle, cycles[i]);
            if let Some(prev) = last {
                prop_assert!(prev < at);
            }
            last = Some(at);
        }
    }

    #[test]
    fn budget_stays_clamped(cur in 1u64..10_000, actual in 0u64..100_000, alpha in 0.0f64..=1.0, lo in 1u64..100, span in 0u64..5000) {
        let policy = StepPolicy { initial_budget: lo, smoothing: alpha, min_budget: lo, max_budget: lo + span };
        let b = next_budget(&policy, cur, actual);
        prop_assert!(b >= lo && b <= lo + span);
    }

    #[test]
    fn noc_delivers_each_event_once_at_offset(
        w in 1u32..=8, h in 1u32..=8, depth in 1usize..=4, phase in 1u64..=3,
        threshold in 0u32..4, trigger in 0usize..3, seed in any::<u64>(),
        raw in prop::collection::vec((0u64..100, any::<u32>(), any::<u32>()), 1..300),
    ) {
        let params = NocParams { phase_cycles: phase, fifo_depth: depth, relay: RelayRule { threshold_hops: threshold, occupancy_trigger: trigger } };
        let cells = w * h;
        let inj: Vec<_> = raw.iter().enumerate().map(|(id, &(cycle, s, d))| {
            let src = ChipletCoord::new(s % cells % w, s % cells / w);
            let dst = ChipletCoord::new(d % cells % w, d % cells / w);
            let event = AerEvent {
                dx: (dst.x as i32 - src.x as i32) as i8,
                dy: (dst.y as i32 - src.y as i32) as i8,
                dst_neuron: id as u32,
                weight: 1,
                step_tag: 0,
                vc: VirtualChannel::Xy,
                relayed: false,
            };
            (cycle, src, event)
        }).collect();
        let run = run_traffic(w, h, params, seed, &inj).unwrap();
        prop_assert_eq!(run.deliveries.len(), inj.len());
        let mut seen = vec![false; inj.len()];
        for d in &run.deliveries {
            let id = d.event.dst_neuron as usize;
            prop_assert!(!seen[id]);
            seen[id] = true;
            let (cycle, src, e) = inj[id];
            let want = ChipletCoord::new((src.x as i32 + e.dx as i32) as u32, (src.y as i32 + e.dy as i32) as u32);
            prop_assert_eq!(d.dst, want);
            let dist = src.manhattan(want);
            prop_assert_eq!(d.hops, dist);
            prop_assert!(d.delivered_at >= cycle + dist as u64 * params.hop_cycles());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kernel_matches_golden(seed in any::<u64>()) {
        let sc = random_scenario(seed, Shape { max_neurons: 400, max_synapses: 4000, max_chiplets: 9, steps: 20 });
        let opts = RunOptions { workers: 1, audit: true, packet_trace: false };
        let out = run_with(&sc.cfg, &sc.network, &sc.stimulus, sc.steps, seed, opts).unwrap();
        let golden = golden_run(&sc.network, &sc.stimulus, sc.steps).unwrap();
        prop_assert_eq!(out.trace.to_text(), golden.to_text());
        let audit = out.audit.unwrap();
        prop_assert_eq!(audit.barrier_violations(), 0);
        prop_assert_eq!(audit.surviving_packets(), 0);
        prop_assert_eq!(out.report.events_injected, out.report.events_delivered);
        for r in &out.report.step_log {
            prop_assert!(r.occupied_cycles() >= r.actual.max(r.budget));
        }
    }

    #[test]
    fn worker_count_is_invisible(seed in any::<u64>(), workers in 2usize..6) {
        let sc = random_scenario(seed, Shape { max_neurons: 400, max_synapses: 4000, max_chiplets: 9, steps: 15 });
        let run = |workers| run_with(&sc.cfg, &sc.network, &sc.stimulus, sc.steps, 1, RunOptions { workers, audit: false, packet_trace: false }).unwrap();
        let (a, b) = (run(1), run(workers));
        prop_assert_eq!(a.trace.to_text(), b.trace.to_text());
        prop_assert_eq!(a.report.to_toml_string(), b.report.to_toml_string());
    }

    #[test]
    fn placement_respects_caps_and_refinement_never_hurts(
        sizes in prop::collection::vec(5u64..120, 2..7),
        seed in any::<u64>(),
        synapses in 200u64..3000,
    ) {
        let k = sizes.len();
        let regions: Vec<Region> = sizes.iter().enumerate().map(|(i, &n)| Region { name: format!("r{i}"), neurons: n }).collect();
        let weights: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| ((i * 7 + j * 3 + seed as usize) % 5) as f64).collect()).collect();
        let c = Connectome::new(regions, weights, synapses).unwrap();
        let net = synthesize_network(&c, seed, WeightRange::default(), NeuronParams::default()).unwrap();
        let mut cfg = WaferConfig::with_grid(4, 4);
        cfg.neuron_capacity_per_chiplet = 100;
        cfg.synapse_capacity_per_chiplet = 2000;
        let p = map_network(&net, &cfg, 0.9, RefineOptions::default()).unwrap();
        prop_assert!(p.check(&net, &cfg, 0.9).is_ok());
        prop_assert!(p.cut_after_refine <= p.cut_before_refine);
        prop_assert_eq!(inter_chiplet_synapses(&net, &p.chiplet_of), p.cut_after_refine);
        let again = map_network(&net, &cfg, 0.9, RefineOptions::default()).unwrap();
        prop_assert_eq!(again, p);
    }

    #[test]
    fn spearman_ignores_monotone_transforms(vals in prop::collection::vec(-100i32..100, 16), other in prop::collection::vec(-100i32..100, 16)) {
        let grid = |v: &[f64]| -> Vec<Vec<f64>> { v.chunks(4).map(|c| c.to_vec()).collect() };
        let a: Vec<f64> = vals.iter().map(|&x| x as f64).collect();
        let b: Vec<f64> = other.iter().map(|&x| x as f64).collect();
        let squashed: Vec<f64> = a.iter().map(|x| (x / 10.0).exp() + 3.0).collect();
        if let (Ok(r1), Ok(r2)) = (spearman(&grid(&a), &grid(&b), true), spearman(&grid(&squashed), &grid(&b), true)) {
            prop_assert!((r1.spearman_r - r2.spearman_r).abs() < 1e-12);
            let sym = spearman(&grid(&b), &grid(&a), true).unwrap();
            prop_assert!((r1.spearman_r - sym.spearman_r).abs() < 1e-12);
            prop_assert!(r1.spearman_r.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn average_ranks_sum_to_triangle(vals in prop::collection::vec(0u8..6, 1..60)) {
        let v: Vec<f64> = vals.iter().map(|&x| x as f64).collect();
        let (ranks, _) = average_ranks(&v);
        let n = v.len() as f64;
        prop_assert!((ranks.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn hungarian_is_optimal(cost in (1usize..=6).prop_flat_map(|n| (n..=6).prop_flat_map(move |m| prop::collection::vec(prop::collection::vec(0i64..40, m), n)))) {
        let cols = hungarian(&cost);
        let total: i64 = cols.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
        fn best(r: usize, cost: &[Vec<i64>], used: &mut [bool]) -> i64 {
            if r == cost.len() { return 0; }
            let mut m = i64::MAX;
            for c in 0..cost[r].len() {
                if !used[c] {
                    used[c] = true;
                    m = m.min(cost[r][c] + best(r + 1, cost, used));
                    used[c] = false;
                }
            }
            m
        }
        prop_assert_eq!(total, best(0, &cost, &mut vec![false; cost[0].len()]));
    }

    #[test]
    fn lanes_grow_by_pitch(gap in 0.1f64..5.0, pitch in 0.01f64..1.0, fanout in 1usize..12) {
        let geometry = Geometry { chiplets: vec![
            ChipletRect::new("a", 0.0, 0.0, 10.0, 10.0),
            ChipletRect::new("b", 10.0 + gap, 0.0, 10.0, 10.0),
        ] };
        let wire = WireModel::default();
        let p1 = enumerate_paths(&geometry, pitch, fanout, &wire).unwrap();
        let p2 = enumerate_paths(&geometry, pitch, fanout, &wire).unwrap();
        prop_assert_eq!(&p1, &p2);
        prop_assert!(!p1.is_empty());
        let gap_nm = p1[0].length_nm;
        let pitch_nm = (pitch * 1e6).round() as i64;
        for w in p1.windows(2) {
            prop_assert!(w[0].length_nm <= w[1].length_nm);
            prop_assert!(w[0].delay_ns <= w[1].delay_ns);
        }
        for p in &p1 {
            prop_assert_eq!(p.length_nm, gap_nm + p.lane as i64 * pitch_nm);
        }
    }
}
