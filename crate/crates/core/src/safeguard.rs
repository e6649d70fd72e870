//! Admissible allocation ranges for the learning manager, spike detection
//! and baseline re-calibration.
//!
//! Per resource, with unit `u` and threshold `θ`:
//!
//! * no completed invocation yet: run at the user allocation and calibrate;
//! * last peak below the user level (over-provisioned): if the last run used
//!   at least `θ` of its allocation, treat it as a spike, revert to the user
//!   allocation and calibrate; otherwise allow `[recent_peak + u, user]`;
//! * last peak at or above the user level (under-provisioned): allow
//!   `[recent_peak + u, per-function max]`.
//!
//! `recent_peak` is rounded up to the unit first. A spike on either resource
//! reverts both. If the lower bound overshoots the upper one the range
//! collapses onto the upper bound.

use crate::domain::{Allocation, ClusterConfig, FunctionHistory, Resource};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TriggerReason {
    NoHistory,
    SpikeDetected,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SafeguardOutcome {
    pub cpu_range: (u32, u32),
    pub mem_range: (u32, u32),
    pub calibrate_baseline: bool,
    pub triggered_reason: TriggerReason,
}

impl SafeguardOutcome {
    fn pinned(user: Allocation, reason: TriggerReason) -> Self {
        SafeguardOutcome {
            cpu_range: (user.cpu, user.cpu),
            mem_range: (user.mem, user.mem),
            calibrate_baseline: true,
            triggered_reason: reason,
        }
    }

    pub fn range(&self, r: Resource) -> (u32, u32) {
        match r {
            Resource::Cpu => self.cpu_range,
            Resource::Mem => self.mem_range,
        }
    }

    pub fn is_safeguard(&self) -> bool {
        self.triggered_reason != TriggerReason::None
    }

    pub fn contains(&self, alloc: Allocation) -> bool {
        Resource::ALL.iter().all(|r| {
            let (lo, hi) = self.range(*r);
            (lo..=hi).contains(&alloc.get(*r))
        })
    }
}

/// Lower bound a non-safeguard allocation must respect for resource `r`,
/// before collapsing onto the branch's upper bound.
pub fn harvest_floor(cfg: &ClusterConfig, r: Resource, recent_peak: f64) -> u32 {
    cfg.quantize_up(r, recent_peak) + cfg.unit(r)
}

pub fn decide_ranges(history: &FunctionHistory, user_alloc: Allocation, cfg: &ClusterConfig) -> SafeguardOutcome {
    let Some(last) = &history.last_record else {
        return SafeguardOutcome::pinned(user_alloc, TriggerReason::NoHistory);
    };
    let threshold = cfg.safeguard_threshold;
    let mut ranges = [(0, 0); 2];
    for (slot, r) in ranges.iter_mut().zip(Resource::ALL) {
        let user = user_alloc.get(r);
        let last_peak = last.peak.get(r);
        let hi = if last_peak < user as f64 {
            if last_peak / last.allocation.get(r) as f64 >= threshold {
                return SafeguardOutcome::pinned(user_alloc, TriggerReason::SpikeDetected);
            }
            user
        } else {
            cfg.cap(r)
        };
        let lo = harvest_floor(cfg, r, history.recent_peak.get(r)).min(hi);
        *slot = (lo, hi);
    }
    SafeguardOutcome {
        cpu_range: ranges[0],
        mem_range: ranges[1],
        calibrate_baseline: false,
        triggered_reason: TriggerReason::None,
    }
}
