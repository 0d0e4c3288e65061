//! Shared generators for integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wafersim_core::config::{ChipletCoord, WaferConfig};
use wafersim_core::network::{ChipletBlock, PlacedNetwork, Stimulus, StimulusEntry};
use wafersim_core::neuron::{NeuronParams, SynapseEntry, SynapseTable};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub max_neurons: usize,
    pub max_synapses: usize,
    pub max_chiplets: u32,
    pub steps: u64,
}

pub struct Scenario {
    pub cfg: WaferConfig,
    pub network: PlacedNetwork,
    pub stimulus: Stimulus,
    pub steps: u64,
}

fn random_params(rng: &mut ChaCha8Rng) -> NeuronParams {
    let leak_den = rng.gen_range(1..=16);
    NeuronParams {
        threshold: rng.gen_range(20..=100),
        reset: rng.gen_range(-10..=0),
        leak_num: rng.gen_range(0..=leak_den),
        leak_den,
        refractory_period: rng.gen_range(0..=3),
    }
}

/// Random network placed on a random grid of at most `max_chiplets`
/// chiplets with neurons scattered uniformly, plus sparse random stimulus.
pub fn random_scenario(seed: u64, shape: Shape) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = loop {
        let w = rng.gen_range(1..=shape.max_chiplets);
        let h = rng.gen_range(1..=shape.max_chiplets / w);
        if w * h <= shape.max_chiplets {
            break (w, h);
        }
    };
    let mut cfg = WaferConfig::with_grid(w, h);
    cfg.link_fifo_depth = rng.gen_range(1..=4);
    cfg.relay_threshold_hops = rng.gen_range(0..=3);
    cfg.relay_occupancy_trigger = rng.gen_range(0..=2);
    let chips = (w * h) as usize;
    let n = rng.gen_range(1..=shape.max_neurons);
    let m = rng.gen_range(0..=shape.max_synapses);

    let mut chip_of = Vec::with_capacity(n);
    let mut local_of = Vec::with_capacity(n);
    let mut counts = vec![0u32; chips];
    for _ in 0..n {
        let c = rng.gen_range(0..chips);
        chip_of.push(c);
        local_of.push(counts[c]);
        counts[c] += 1;
    }
    let mut net = PlacedNetwork::empty(w, h);
    for (c, &k) in counts.iter().enumerate() {
        net.chiplets[c].params = (0..k).map(|_| random_params(&mut rng)).collect();
    }
    let mut pairs: Vec<Vec<(u32, SynapseEntry)>> = vec![Vec::new(); chips];
    for _ in 0..m {
        let (s, d) = (rng.gen_range(0..n), rng.gen_range(0..n));
        pairs[chip_of[s]].push((
            local_of[s],
            SynapseEntry {
                dst_neuron: local_of[d],
                dst_chiplet: chip_of[d] as u16,
                weight: rng.gen_range(-30..=50),
            },
        ));
    }
    for (c, p) in pairs.into_iter().enumerate() {
        let k = counts[c] as usize;
        let params = std::mem::take(&mut net.chiplets[c].params);
        net.chiplets[c] = ChipletBlock {
            params,
            synapses: SynapseTable::from_pairs(k, p),
        };
    }
    let per_step = rng.gen_range(1..=(n / 10).max(1));
    let mut entries = Vec::new();
    for step in 0..shape.steps {
        for _ in 0..per_step {
            let g = rng.gen_range(0..n);
            entries.push(StimulusEntry {
                step,
                chiplet: ChipletCoord::new(chip_of[g] as u32 % w, chip_of[g] as u32 / w),
                neuron: local_of[g],
                weight: rng.gen_range(10..=150),
            });
        }
    }
    Scenario {
        cfg,
        network: net,
        stimulus: Stimulus::new(entries),
        steps: shape.steps,
    }
}
