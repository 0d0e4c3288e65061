//! Hierarchical time-step barrier: one local controller per sync domain, a
//! global controller that tracks the wafer-wide in-flight packet count, and
//! the adaptive step-budget policy.
//!
//! A step ends when every member chiplet has reported its compute phase and
//! the injected-minus-delivered counter is back to zero. Only then do the
//! locals move to REPORTED and the master may advance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ChipletCoord, StepPolicy, SyncDomain, WaferConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Computing,
    Draining,
    Reported,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyncError {
    #[error("chiplet {chiplet} is not a member of domain {domain}")]
    NotMember { domain: u32, chiplet: ChipletCoord },
    #[error("duplicate completion report from {chiplet} in domain {domain}")]
    DuplicateReport { domain: u32, chiplet: ChipletCoord },
    #[error("domain {domain} received a report while {phase:?}")]
    WrongPhase { domain: u32, phase: Phase },
    #[error("in-flight counter would drop below zero")]
    Underflow,
    #[error("advance requested before the barrier completed ({reason})")]
    BarrierIncomplete { reason: &'static str },
    #[error("domain outstanding counters sum to {sum} but the global count is {global}")]
    Unreconciled { sum: i64, global: u64 },
}

#[derive(Debug, Clone)]
pub struct LocalController {
    pub domain_id: u32,
    pub members: Vec<ChipletCoord>,
    pub phase: Phase,
    /// Compute cycles reported this step, parallel to `members`.
    pub compute_cycles: Vec<Option<u64>>,
    /// Packets injected by members minus packets delivered to members.
    pub outstanding: i64,
}

impl LocalController {
    pub fn new(domain: &SyncDomain) -> Self {
        Self {
            domain_id: domain.id,
            members: domain.members.clone(),
            phase: Phase::Computing,
            compute_cycles: vec![None; domain.members.len()],
            outstanding: 0,
        }
    }

    pub fn report_member_done(
        &mut self,
        chiplet: ChipletCoord,
        compute_cycles: u64,
    ) -> Result<(), SyncError> {
        let slot = self
            .members
            .iter()
            .position(|&m| m == chiplet)
            .ok_or(SyncError::NotMember {
                domain: self.domain_id,
                chiplet,
            })?;
        if self.phase != Phase::Computing {
            return Err(if self.compute_cycles[slot].is_some() {
                SyncError::DuplicateReport {
                    domain: self.domain_id,
                    chiplet,
                }
            } else {
                SyncError::WrongPhase {
                    domain: self.domain_id,
                    phase: self.phase,
                }
            });
        }
        if self.compute_cycles[slot].is_some() {
            return Err(SyncError::DuplicateReport {
                domain: self.domain_id,
                chiplet,
            });
        }
        self.compute_cycles[slot] = Some(compute_cycles);
        if self.compute_cycles.iter().all(Option::is_some) {
            self.phase = Phase::Draining;
        }
        Ok(())
    }

    /// Longest member compute phase reported this step.
    pub fn max_compute_cycles(&self) -> u64 {
        self.compute_cycles.iter().flatten().copied().max().unwrap_or(0)
    }

    fn begin_step(&mut self) {
        self.phase = if self.members.is_empty() {
            Phase::Draining
        } else {
            Phase::Computing
        };
        self.compute_cycles.iter_mut().for_each(|c| *c = None);
        self.outstanding = 0;
    }
}

#[derive(Debug, Clone)]
pub struct GlobalController {
    pub step: u64,
    pub reported: Vec<bool>,
    pub in_flight: u64,
    pub budget: u64,
    pub next_budget: u64,
    pub policy: StepPolicy,
}

impl GlobalController {
    pub fn new(policy: &StepPolicy, domains: usize) -> Self {
        Self {
            step: 0,
            reported: vec![false; domains],
            in_flight: 0,
            budget: policy.initial_budget,
            next_budget: policy.initial_budget,
            policy: policy.clone(),
        }
    }

    /// +1 on injection, −1 on delivery.
    pub fn track_event(&mut self, delta: i64) -> Result<u64, SyncError> {
        let next = self.in_flight as i64 + delta;
        if next < 0 {
            return Err(SyncError::Underflow);
        }
        self.in_flight = next as u64;
        Ok(self.in_flight)
    }

    pub fn barrier_complete(&self) -> bool {
        self.in_flight == 0 && self.reported.iter().all(|&r| r)
    }

    /// Moves to the next step and sets the budget from the step's longest
    /// domain completion time.
    pub fn advance_step(&mut self, actual_max_cycles: u64) -> Result<(u64, u64), SyncError> {
        if self.in_flight != 0 {
            return Err(SyncError::BarrierIncomplete {
                reason: "packets still in flight",
            });
        }
        if !self.reported.iter().all(|&r| r) {
            return Err(SyncError::BarrierIncomplete {
                reason: "not every domain has reported",
            });
        }
        self.next_budget = next_budget(&self.policy, self.budget, actual_max_cycles);
        self.budget = self.next_budget;
        self.step += 1;
        self.reported.iter_mut().for_each(|r| *r = false);
        Ok((self.step, self.budget))
    }
}

/// Exponential smoothing of the observed step length, clamped to the policy
/// bounds.
pub fn next_budget(policy: &StepPolicy, current: u64, actual: u64) -> u64 {
    let a = policy.smoothing;
    let blended = a * actual as f64 + (1.0 - a) * current as f64;
    let rounded = blended.round();
    if rounded >= policy.max_budget as f64 {
        policy.max_budget
    } else {
        (rounded as u64).max(policy.min_budget)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub budget: u64,
    /// Longest domain completion, in cycles from the step start.
    pub actual: u64,
    /// Cycles between the last compute report and quiescence.
    pub drain: u64,
    pub domain_completion: Vec<u64>,
}

impl StepRecord {
    /// Length the step occupies on the model clock: the budget, stretched
    /// when the work overruns it.
    pub fn occupied_cycles(&self) -> u64 {
        self.budget.max(self.actual)
    }

    pub fn to_line(&self) -> String {
        let domains: Vec<String> = self.domain_completion.iter().map(u64::to_string).collect();
        format!(
            "{} {} {} {} {}",
            self.step,
            self.budget,
            self.actual,
            self.drain,
            domains.join(",")
        )
    }
}

/// Both controller levels for one wafer.
#[derive(Debug, Clone)]
pub struct SyncState {
    pub locals: Vec<LocalController>,
    pub global: GlobalController,
    domain_of: Vec<usize>,
}

impl SyncState {
    pub fn new(cfg: &WaferConfig) -> Self {
        let mut locals: Vec<LocalController> =
            cfg.sync_domains.iter().map(LocalController::new).collect();
        for l in &mut locals {
            l.begin_step();
        }
        Self {
            global: GlobalController::new(&cfg.step_policy, locals.len()),
            locals,
            domain_of: cfg.domain_of_chiplets(),
        }
    }

    pub fn domain_of(&self, chiplet_index: usize) -> usize {
        self.domain_of[chiplet_index]
    }

    pub fn member_done(
        &mut self,
        chiplet_index: usize,
        chiplet: ChipletCoord,
        cycles: u64,
    ) -> Result<(), SyncError> {
        let d = self.domain_of[chiplet_index];
        self.locals[d].report_member_done(chiplet, cycles)
    }

    pub fn injected(&mut self, src_index: usize) -> Result<(), SyncError> {
        self.locals[self.domain_of[src_index]].outstanding += 1;
        self.global.track_event(1).map(|_| ())
    }

    pub fn delivered(&mut self, dst_index: usize) -> Result<(), SyncError> {
        self.global.track_event(-1)?;
        self.locals[self.domain_of[dst_index]].outstanding -= 1;
        Ok(())
    }

    pub fn all_draining(&self) -> bool {
        self.locals.iter().all(|l| l.phase != Phase::Computing)
    }

    pub fn quiescent(&self) -> bool {
        self.all_draining() && self.global.in_flight == 0
    }

    /// Every draining domain reports once the wafer is quiescent.
    pub fn report_domains(&mut self) -> Result<(), SyncError> {
        if !self.quiescent() {
            return Err(SyncError::BarrierIncomplete {
                reason: "wafer not quiescent",
            });
        }
        let sum: i64 = self.locals.iter().map(|l| l.outstanding).sum();
        if sum != self.global.in_flight as i64 {
            return Err(SyncError::Unreconciled {
                sum,
                global: self.global.in_flight,
            });
        }
        for (d, l) in self.locals.iter_mut().enumerate() {
            l.phase = Phase::Reported;
            self.global.reported[d] = true;
        }
        Ok(())
    }

    /// Master broadcast: advance and unblock every local.
    pub fn advance(&mut self, actual_max_cycles: u64) -> Result<(u64, u64), SyncError> {
        let out = self.global.advance_step(actual_max_cycles)?;
        for l in &mut self.locals {
            l.begin_step();
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn domain4() -> LocalController {
        LocalController::new(&SyncDomain {
            id: 3,
            global_master: false,
            members: (0..4).map(|i| ChipletCoord::new(i, 0)).collect(),
        })
    }

    #[test]
    fn all_reports_move_to_draining() {
        let mut l = domain4();
        for i in 0..3 {
            l.report_member_done(ChipletCoord::new(i, 0), 10 + i as u64).unwrap();
        }
        assert_eq!(l.phase, Phase::Computing);
        l.report_member_done(ChipletCoord::new(3, 0), 5).unwrap();
        assert_eq!(l.phase, Phase::Draining);
        assert_eq!(l.max_compute_cycles(), 12);
    }

    #[test]
    fn foreign_and_duplicate_reports_rejected() {
        let mut l = domain4();
        assert_eq!(
            l.report_member_done(ChipletCoord::new(9, 9), 1),
            Err(SyncError::NotMember {
                domain: 3,
                chiplet: ChipletCoord::new(9, 9)
            })
        );
        l.report_member_done(ChipletCoord::new(1, 0), 1).unwrap();
        assert!(matches!(
            l.report_member_done(ChipletCoord::new(1, 0), 1),
            Err(SyncError::DuplicateReport { .. })
        ));
    }

    #[test]
    fn counter_balance_and_underflow() {
        let mut g = GlobalController::new(&StepPolicy::default(), 1);
        assert_eq!(g.track_event(-1), Err(SyncError::Underflow));
        for _ in 0..5 {
            g.track_event(1).unwrap();
        }
        for _ in 0..5 {
            g.track_event(-1).unwrap();
        }
        assert_eq!(g.in_flight, 0);
    }

    #[test]
    fn budget_policy_examples() {
        let p = StepPolicy {
            initial_budget: 10_000,
            smoothing: 0.5,
            min_budget: 1_000,
            max_budget: 10_000_000,
        };
        assert_eq!(next_budget(&p, 10_000, 2_000), 6_000);
        let frozen = StepPolicy { smoothing: 0.0, ..p.clone() };
        assert_eq!(next_budget(&frozen, 10_000, 1), 10_000);
        assert_eq!(next_budget(&frozen, 10_000, 99_999_999), 10_000);
        let eager = StepPolicy { smoothing: 1.0, ..p.clone() };
        assert_eq!(next_budget(&eager, 10_000, 50_000_000), 10_000_000);
        assert_eq!(next_budget(&eager, 10_000, 3), 1_000);
    }

    #[test]
    fn advance_requires_barrier() {
        let mut g = GlobalController::new(&StepPolicy::default(), 2);
        assert!(matches!(g.advance_step(5), Err(SyncError::BarrierIncomplete { .. })));
        g.reported = vec![true, true];
        g.track_event(1).unwrap();
        assert!(matches!(g.advance_step(5), Err(SyncError::BarrierIncomplete { .. })));
        g.track_event(-1).unwrap();
        assert_eq!(g.advance_step(2_000), Ok((1, 6_000)));
        assert_eq!(g.reported, vec![false, false]);
    }

    #[test]
    fn local_only_step_completes_after_compute() {
        let cfg = WaferConfig::with_grid(2, 2);
        let mut s = SyncState::new(&cfg);
        for i in 0..4 {
            assert!(!s.quiescent());
            s.member_done(i, cfg.coord_of(i), 7).unwrap();
        }
        assert!(s.quiescent());
        s.report_domains().unwrap();
        assert_eq!(s.advance(7).unwrap().0, 1);
        assert!(s.locals.iter().all(|l| l.phase == Phase::Computing));
    }

    #[test]
    fn reporting_waits_for_in_flight_packets() {
        let cfg = WaferConfig::with_grid(8, 8);
        let mut s = SyncState::new(&cfg);
        s.injected(0).unwrap();
        for i in 0..64 {
            s.member_done(i, cfg.coord_of(i), 1).unwrap();
        }
        assert!(s.all_draining() && !s.quiescent());
        assert!(s.report_domains().is_err());
        s.delivered(63).unwrap();
        s.report_domains().unwrap();
        assert_eq!(s.locals[0].outstanding + s.locals[3].outstanding, 0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn budget_monotone_in_actual(
                alpha in 0.01f64..=1.0,
                current in 1u64..1_000_000,
                a in 0u64..1_000_000,
                b in 0u64..1_000_000,
            ) {
                let p = StepPolicy { initial_budget: 1, smoothing: alpha, min_budget: 1, max_budget: u64::MAX / 2 };
                let (lo, hi) = (a.min(b), a.max(b));
                prop_assert!(next_budget(&p, current, lo) <= next_budget(&p, current, hi));
            }
        }
    }
}
