//! Resource-manager interface plus the Fixed, Greedy and ENSURE-like
//! baselines.

use std::collections::HashMap;

use crate::domain::{Allocation, ClusterConfig, FunctionHistory, Resource};
use crate::error::Result;
use crate::sim::PlatformState;

/// Everything a manager may look at when an invocation arrives.
#[derive(Clone, Copy, Debug)]
pub struct AllocationRequest<'a> {
    pub inv_id: u64,
    pub function_id: &'a str,
    pub arrival_time_s: f64,
    pub history: &'a FunctionHistory,
    pub platform: PlatformState,
    pub user_alloc: Allocation,
    pub cluster: &'a ClusterConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ManagerDecision {
    pub allocation: Allocation,
    /// Forced run at the user allocation.
    pub safeguard: bool,
    /// Overwrite the function's baseline latency with this invocation's.
    pub calibrate_baseline: bool,
}

impl ManagerDecision {
    pub fn plain(allocation: Allocation) -> Self {
        ManagerDecision { allocation, safeguard: false, calibrate_baseline: false }
    }
}

pub trait ResourceManager {
    fn name(&self) -> &str;
    fn allocate(&mut self, req: &AllocationRequest<'_>) -> Result<ManagerDecision>;
}

impl<M: ResourceManager + ?Sized> ResourceManager for Box<M> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn allocate(&mut self, req: &AllocationRequest<'_>) -> Result<ManagerDecision> {
        (**self).allocate(req)
    }
}

/// Always grants exactly what the user configured.
#[derive(Clone, Copy, Debug, Default)]
pub struct FixedManager;

pub fn fixed_allocate(req: &AllocationRequest<'_>) -> Allocation {
    req.user_alloc
}

impl ResourceManager for FixedManager {
    fn name(&self) -> &str {
        "fixed"
    }

    fn allocate(&mut self, req: &AllocationRequest<'_>) -> Result<ManagerDecision> {
        Ok(ManagerDecision::plain(fixed_allocate(req)))
    }
}

/// Resources taken from over-provisioned functions and not yet handed out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HarvestPool {
    pub harvested_cpu: u32,
    pub harvested_mem: u32,
}

impl HarvestPool {
    pub fn get(&self, r: Resource) -> u32 {
        match r {
            Resource::Cpu => self.harvested_cpu,
            Resource::Mem => self.harvested_mem,
        }
    }

    fn credit(&mut self, r: Resource, amount: u32) {
        match r {
            Resource::Cpu => self.harvested_cpu += amount,
            Resource::Mem => self.harvested_mem += amount,
        }
    }

    fn debit(&mut self, r: Resource, amount: u32) -> bool {
        let slot = match r {
            Resource::Cpu => &mut self.harvested_cpu,
            Resource::Mem => &mut self.harvested_mem,
        };
        if *slot >= amount {
            *slot -= amount;
            true
        } else {
            false
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreedyParams {
    pub over_threshold: f64,
    pub under_threshold: f64,
}

impl Default for GreedyParams {
    fn default() -> Self {
        GreedyParams { over_threshold: 0.8, under_threshold: 0.95 }
    }
}

/// One-unit-per-invocation step rule. `level` is the function's current
/// allocation and is updated in place; the pool is credited for every step
/// down and debited for every step up.
pub fn greedy_allocate(
    req: &AllocationRequest<'_>,
    level: &mut Allocation,
    pool: &mut HarvestPool,
    params: GreedyParams,
) -> Allocation {
    let Some(last) = &req.history.last_record else {
        return *level;
    };
    let cfg = req.cluster;
    for r in Resource::ALL {
        let unit = cfg.unit(r);
        let current = level.get(r);
        let util = last.peak.get(r) / last.allocation.get(r) as f64;
        if util < params.over_threshold {
            if current >= 2 * unit {
                level.set(r, current - unit);
                pool.credit(r, unit);
            }
        } else if util >= params.under_threshold && current + unit <= cfg.cap(r) && pool.debit(r, unit) {
            level.set(r, current + unit);
        }
    }
    *level
}

#[derive(Clone, Debug, Default)]
pub struct GreedyManager {
    pub params: GreedyParams,
    pub pool: HarvestPool,
    levels: HashMap<String, Allocation>,
}

impl GreedyManager {
    pub fn new(params: GreedyParams) -> Self {
        GreedyManager { params, ..Default::default() }
    }

    pub fn level(&self, function_id: &str) -> Option<Allocation> {
        self.levels.get(function_id).copied()
    }
}

impl ResourceManager for GreedyManager {
    fn name(&self) -> &str {
        "greedy"
    }

    fn allocate(&mut self, req: &AllocationRequest<'_>) -> Result<ManagerDecision> {
        let level = self.levels.entry(req.function_id.to_string()).or_insert(req.user_alloc);
        Ok(ManagerDecision::plain(greedy_allocate(req, level, &mut self.pool, self.params)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsureParams {
    pub degradation_factor: f64,
    pub low_utilization: f64,
}

impl Default for EnsureParams {
    fn default() -> Self {
        EnsureParams { degradation_factor: 1.1, low_utilization: 0.5 }
    }
}

/// CPU-only reactive rule: add a core after a degraded run, drop one after
/// an under-utilized run, never touch memory.
pub fn ensure_allocate(req: &AllocationRequest<'_>, cpu_level: &mut u32, params: EnsureParams) -> Allocation {
    if let (Some(last), Some(baseline)) = (&req.history.last_record, req.history.baseline_latency_s) {
        let cfg = req.cluster;
        if last.response_latency_s > params.degradation_factor * baseline {
            *cpu_level = (*cpu_level + cfg.cpu_unit).min(cfg.per_function_max.cpu);
        } else if last.peak.cpu / (last.allocation.cpu as f64) < params.low_utilization && *cpu_level > cfg.cpu_unit {
            *cpu_level -= cfg.cpu_unit;
        }
    }
    Allocation::new(*cpu_level, req.user_alloc.mem)
}

#[derive(Clone, Debug, Default)]
pub struct EnsureManager {
    pub params: EnsureParams,
    cpu_levels: HashMap<String, u32>,
}

impl EnsureManager {
    pub fn new(params: EnsureParams) -> Self {
        EnsureManager { params, cpu_levels: HashMap::new() }
    }
}

impl ResourceManager for EnsureManager {
    fn name(&self) -> &str {
        "ensure"
    }

    fn allocate(&mut self, req: &AllocationRequest<'_>) -> Result<ManagerDecision> {
        let level = self.cpu_levels.entry(req.function_id.to_string()).or_insert(req.user_alloc.cpu);
        Ok(ManagerDecision::plain(ensure_allocate(req, level, self.params)))
    }
}
