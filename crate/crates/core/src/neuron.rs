//! Per-chiplet spiking computation: discrete-time leaky integrate-and-fire
//! neurons with integer state, a compressed-row synapse store and SOP
//! accounting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aer::{step_tag_of, AerEvent, VirtualChannel};
use crate::config::ChipletCoord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub threshold: i32,
    pub reset: i32,
    pub leak_num: u32,
    pub leak_den: u32,
    pub refractory_period: u32,
}

impl Default for NeuronParams {
    fn default() -> Self {
        Self {
            threshold: 64,
            reset: 0,
            leak_num: 15,
            leak_den: 16,
            refractory_period: 1,
        }
    }
}

impl NeuronParams {
    pub fn check(&self) -> Result<(), String> {
        if self.leak_den == 0 {
            return Err("leak denominator must be positive".into());
        }
        if self.leak_num > self.leak_den {
            return Err(format!(
                "leak {}/{} exceeds 1",
                self.leak_num, self.leak_den
            ));
        }
        if self.reset >= self.threshold {
            return Err(format!(
                "reset {} must be below threshold {}",
                self.reset, self.threshold
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeuronState {
    pub v_mem: i32,
    pub v_threshold: i32,
    pub v_reset: i32,
    pub leak_num: u32,
    pub leak_den: u32,
    pub refractory_steps_remaining: u32,
    pub refractory_period: u32,
}

impl NeuronState {
    /// Fresh neuron resting at its reset potential.
    pub fn new(p: &NeuronParams) -> Self {
        Self {
            v_mem: p.reset,
            v_threshold: p.threshold,
            v_reset: p.reset,
            leak_num: p.leak_num,
            leak_den: p.leak_den,
            refractory_steps_remaining: 0,
            refractory_period: p.refractory_period,
        }
    }

    /// Advances one step with the summed input. Returns `(spiked, saturated)`.
    #[inline]
    pub fn update(&mut self, input: i64) -> (bool, bool) {
        if self.refractory_steps_remaining > 0 {
            self.refractory_steps_remaining -= 1;
            return (false, false);
        }
        let leaked =
            (self.v_mem as i64 * self.leak_num as i64).div_euclid(self.leak_den as i64);
        let raw = leaked.saturating_add(input);
        let clamped = raw.clamp(i32::MIN as i64, i32::MAX as i64);
        let saturated = clamped != raw;
        self.v_mem = clamped as i32;
        if self.v_mem >= self.v_threshold {
            self.v_mem = self.v_reset;
            self.refractory_steps_remaining = self.refractory_period;
            (true, saturated)
        } else {
            (false, saturated)
        }
    }
}

/// One outgoing synapse. The destination chiplet is a row-major linear index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SynapseEntry {
    pub dst_neuron: u32,
    pub dst_chiplet: u16,
    pub weight: i16,
}

/// Outgoing adjacency of every local neuron in compressed-row form.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynapseTable {
    row_offsets: Vec<usize>,
    entries: Vec<SynapseEntry>,
}

impl SynapseTable {
    pub fn empty(neurons: usize) -> Self {
        Self {
            row_offsets: vec![0; neurons + 1],
            entries: Vec::new(),
        }
    }

    /// Builds rows from `(src, entry)` pairs; entry order within a row follows
    /// input order.
    pub fn from_pairs(neurons: usize, mut pairs: Vec<(u32, SynapseEntry)>) -> Self {
        pairs.sort_by_key(|&(src, _)| src);
        let mut row_offsets = vec![0usize; neurons + 1];
        for &(src, _) in &pairs {
            row_offsets[src as usize + 1] += 1;
        }
        for i in 0..neurons {
            row_offsets[i + 1] += row_offsets[i];
        }
        Self {
            row_offsets,
            entries: pairs.into_iter().map(|(_, e)| e).collect(),
        }
    }

    /// Builds directly from row offsets and entries; offsets must be
    /// monotone and end at `entries.len()`.
    pub fn from_raw(row_offsets: Vec<usize>, entries: Vec<SynapseEntry>) -> Result<Self, String> {
        if row_offsets.first() != Some(&0) {
            return Err("row offsets must start at 0".into());
        }
        if row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err("row offsets must be non-decreasing".into());
        }
        if *row_offsets.last().unwrap() != entries.len() {
            return Err("last row offset must equal entry count".into());
        }
        Ok(Self {
            row_offsets,
            entries,
        })
    }

    pub fn neuron_count(&self) -> usize {
        self.row_offsets.len().saturating_sub(1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn row(&self, src: usize) -> &[SynapseEntry] {
        &self.entries[self.row_offsets[src]..self.row_offsets[src + 1]]
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NeuronError {
    #[error("routing integrity: neuron {index} addressed on chiplet {chiplet} which holds {count} neurons")]
    RoutingIntegrity {
        chiplet: ChipletCoord,
        index: u32,
        count: usize,
    },
}

/// State of one chiplet's compute core.
#[derive(Debug, Clone)]
pub struct CoreState {
    pub coord: ChipletCoord,
    grid_width: u32,
    pub neurons: Vec<NeuronState>,
    /// Input pending for the next update, one slot per neuron.
    pub accumulator: Vec<i64>,
    pub synapses: SynapseTable,
    pub sops: u64,
    pub spikes: u64,
    pub saturations: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FanoutOutcome {
    pub local_deliveries: usize,
    pub events: Vec<AerEvent>,
}

impl CoreState {
    pub fn new(
        coord: ChipletCoord,
        grid_width: u32,
        neurons: Vec<NeuronState>,
        synapses: SynapseTable,
    ) -> Self {
        assert_eq!(neurons.len(), synapses.neuron_count());
        let n = neurons.len();
        Self {
            coord,
            grid_width,
            neurons,
            accumulator: vec![0; n],
            synapses,
            sops: 0,
            spikes: 0,
            saturations: 0,
        }
    }

    pub fn neuron_count(&self) -> usize {
        self.neurons.len()
    }

    fn linear_index(&self) -> u16 {
        (self.coord.y * self.grid_width + self.coord.x) as u16
    }

    fn check_index(&self, index: u32) -> Result<usize, NeuronError> {
        let i = index as usize;
        if i < self.neurons.len() {
            Ok(i)
        } else {
            Err(NeuronError::RoutingIntegrity {
                chiplet: self.coord,
                index,
                count: self.neurons.len(),
            })
        }
    }

    fn accumulate(&mut self, i: usize, weight: i64) {
        let slot = &mut self.accumulator[i];
        match slot.checked_add(weight) {
            Some(v) => *slot = v,
            None => {
                *slot = slot.saturating_add(weight);
                self.saturations += 1;
            }
        }
    }

    /// Updates every neuron with its pending input, clears the accumulator
    /// and returns the spiking local indices in ascending order.
    pub fn step_neurons(&mut self) -> Vec<u32> {
        let mut fired = Vec::new();
        for (i, (n, acc)) in self
            .neurons
            .iter_mut()
            .zip(self.accumulator.iter_mut())
            .enumerate()
        {
            let (spiked, saturated) = n.update(*acc);
            *acc = 0;
            if saturated {
                self.saturations += 1;
            }
            if spiked {
                fired.push(i as u32);
            }
        }
        self.spikes += fired.len() as u64;
        fired
    }

    /// One synaptic operation landing on local neuron `dst`.
    pub fn deliver_event(&mut self, dst: u32, weight: i16) -> Result<(), NeuronError> {
        let i = self.check_index(dst)?;
        self.accumulate(i, weight as i64);
        self.sops += 1;
        Ok(())
    }

    /// External stimulus; not a synaptic operation.
    pub fn inject_input(&mut self, dst: u32, weight: i64) -> Result<(), NeuronError> {
        let i = self.check_index(dst)?;
        self.accumulate(i, weight);
        Ok(())
    }

    /// Delivers same-chiplet targets of `src` immediately and appends one
    /// event per off-chiplet target to `out`. Returns the local delivery count.
    pub fn fanout_into(
        &mut self,
        src: u32,
        step: u64,
        out: &mut Vec<AerEvent>,
    ) -> Result<usize, NeuronError> {
        let src = self.check_index(src)? as usize;
        let me = self.linear_index();
        let w = self.grid_width as i32;
        let (sx, sy) = (self.coord.x as i32, self.coord.y as i32);
        let tag = step_tag_of(step);
        let start = self.synapses.row_offsets[src];
        let end = self.synapses.row_offsets[src + 1];
        let mut local = 0;
        for k in start..end {
            let e = self.synapses.entries[k];
            if e.dst_chiplet == me {
                self.deliver_event(e.dst_neuron, e.weight)?;
                local += 1;
            } else {
                let (dx, dy) = (e.dst_chiplet as i32 % w, e.dst_chiplet as i32 / w);
                out.push(AerEvent {
                    dx: (dx - sx) as i8,
                    dy: (dy - sy) as i8,
                    dst_neuron: e.dst_neuron,
                    weight: e.weight,
                    step_tag: tag,
                    vc: VirtualChannel::Xy,
                    relayed: false,
                });
            }
        }
        Ok(local)
    }

    pub fn fanout(&mut self, src: u32, step: u64) -> Result<FanoutOutcome, NeuronError> {
        let mut events = Vec::new();
        let local_deliveries = self.fanout_into(src, step, &mut events)?;
        Ok(FanoutOutcome {
            local_deliveries,
            events,
        })
    }
}
