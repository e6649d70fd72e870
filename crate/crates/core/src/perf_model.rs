//! Synthetic ground-truth performance function: latency is flat above the
//! saturation point and degrades multiplicatively below it.

use rand::Rng;

use crate::domain::{Allocation, ClusterConfig, FunctionSpec, Resource, SaturationPoint, Usage};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyModelParams {
    pub cpu_exponent: f64,
    pub mem_exponent: f64,
}

impl Default for LatencyModelParams {
    fn default() -> Self {
        LatencyModelParams { cpu_exponent: 1.0, mem_exponent: 1.0 }
    }
}

impl From<&FunctionSpec> for LatencyModelParams {
    fn from(spec: &FunctionSpec) -> Self {
        LatencyModelParams { cpu_exponent: spec.cpu_exponent, mem_exponent: spec.mem_exponent }
    }
}

/// Draws the saturation point of one invocation. Always consumes two
/// uniforms from `rng`, even with zero jitter.
pub fn realize_saturation<R: Rng + ?Sized>(
    spec: &FunctionSpec,
    input_scale: f64,
    rng: &mut R,
    cfg: &ClusterConfig,
) -> SaturationPoint {
    let u_c: f64 = rng.random_range(-1.0..=1.0) * spec.sat_jitter;
    let u_m: f64 = rng.random_range(-1.0..=1.0) * spec.sat_jitter;
    let cpu = (spec.sat_cpu_base * input_scale * (1.0 + u_c)).min(cfg.per_function_max.cpu as f64);
    let mem = (spec.sat_mem_base * input_scale * (1.0 + u_m)).min(cfg.per_function_max.mem as f64);
    SaturationPoint::new(cpu.max(f64::MIN_POSITIVE), mem.max(f64::MIN_POSITIVE))
        .expect("positive finite saturation")
}

/// Latency of one execution. `saturated_latency_s` is the latency at or above
/// saturation, already scaled by the invocation's input size.
pub fn execution_latency(
    sat: &SaturationPoint,
    alloc: Allocation,
    saturated_latency_s: f64,
    params: LatencyModelParams,
) -> f64 {
    let cpu_penalty = (sat.cpu() / alloc.cpu as f64).max(1.0).powf(params.cpu_exponent);
    let mem_penalty = (sat.mem() / alloc.mem as f64).max(1.0).powf(params.mem_exponent);
    saturated_latency_s * cpu_penalty * mem_penalty
}

pub fn usage_peak(sat: &SaturationPoint, alloc: Allocation) -> Usage {
    Usage::new(sat.cpu().min(alloc.cpu as f64), sat.mem().min(alloc.mem as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProvisionClass {
    Harvestable,
    Acceleratable,
    Decent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Classification {
    pub cpu: ProvisionClass,
    pub mem: ProvisionClass,
}

/// Labels each resource by comparing the allocation with the saturation
/// point rounded up to the resource unit.
pub fn classify(sat: &SaturationPoint, alloc: Allocation, cfg: &ClusterConfig) -> Classification {
    let label = |r: Resource| {
        let needed = cfg.quantize_up(r, sat.get(r));
        match alloc.get(r).cmp(&needed) {
            std::cmp::Ordering::Greater => ProvisionClass::Harvestable,
            std::cmp::Ordering::Less => ProvisionClass::Acceleratable,
            std::cmp::Ordering::Equal => ProvisionClass::Decent,
        }
    };
    Classification { cpu: label(Resource::Cpu), mem: label(Resource::Mem) }
}
