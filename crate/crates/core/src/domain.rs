//! Value types shared by the simulator, the managers and the learner.

use crate::error::{Error, Result};

/// One of the two resources a manager allocates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Resource {
    Cpu,
    Mem,
}

impl Resource {
    pub const ALL: [Resource; 2] = [Resource::Cpu, Resource::Mem];
}

/// A non-preemptive grant of whole CPU cores and memory in MB.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Allocation {
    pub cpu: u32,
    pub mem: u32,
}

impl Allocation {
    pub const fn new(cpu: u32, mem: u32) -> Self {
        Allocation { cpu, mem }
    }

    /// Builds an allocation and rejects it unless it is valid under `cfg`.
    pub fn checked(cpu: u32, mem: u32, cfg: &ClusterConfig) -> Result<Self> {
        let alloc = Allocation { cpu, mem };
        if validate_allocation(alloc, cfg) {
            Ok(alloc)
        } else {
            Err(Error::contract(format!(
                "allocation {cpu} cores / {mem} MB outside [1, {}] cores / [{}, {}] MB in {} MB units",
                cfg.per_function_max.cpu, cfg.mem_unit_mb, cfg.per_function_max.mem, cfg.mem_unit_mb
            )))
        }
    }

    pub fn get(&self, r: Resource) -> u32 {
        match r {
            Resource::Cpu => self.cpu,
            Resource::Mem => self.mem,
        }
    }

    pub fn set(&mut self, r: Resource, value: u32) {
        match r {
            Resource::Cpu => self.cpu = value,
            Resource::Mem => self.mem = value,
        }
    }
}

/// True iff `alloc` respects the per-function caps and quantization of `cfg`.
pub fn validate_allocation(alloc: Allocation, cfg: &ClusterConfig) -> bool {
    let cpu_ok = alloc.cpu >= cfg.cpu_unit
        && alloc.cpu <= cfg.per_function_max.cpu
        && alloc.cpu.is_multiple_of(cfg.cpu_unit);
    let mem_ok = alloc.mem >= cfg.mem_unit_mb
        && alloc.mem <= cfg.per_function_max.mem
        && alloc.mem.is_multiple_of(cfg.mem_unit_mb);
    cpu_ok && mem_ok
}

/// Real-valued resource amounts: saturation points and usage peaks.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Usage {
    pub cpu: f64,
    pub mem: f64,
}

impl Usage {
    pub const ZERO: Usage = Usage { cpu: 0.0, mem: 0.0 };

    pub const fn new(cpu: f64, mem: f64) -> Self {
        Usage { cpu, mem }
    }

    pub fn get(&self, r: Resource) -> f64 {
        match r {
            Resource::Cpu => self.cpu,
            Resource::Mem => self.mem,
        }
    }

    pub fn max(self, other: Usage) -> Usage {
        Usage::new(self.cpu.max(other.cpu), self.mem.max(other.mem))
    }
}

/// The allocation beyond which an invocation stops getting faster.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaturationPoint(Usage);

impl SaturationPoint {
    pub fn new(cpu: f64, mem: f64) -> Result<Self> {
        if !(cpu.is_finite() && mem.is_finite() && cpu > 0.0 && mem > 0.0) {
            return Err(Error::contract(format!(
                "saturation point ({cpu}, {mem}) must be finite and positive"
            )));
        }
        Ok(SaturationPoint(Usage::new(cpu, mem)))
    }

    pub fn cpu(&self) -> f64 {
        self.0.cpu
    }

    pub fn mem(&self) -> f64 {
        self.0.mem
    }

    pub fn get(&self, r: Resource) -> f64 {
        self.0.get(r)
    }

    pub fn as_usage(&self) -> Usage {
        self.0
    }
}

/// A deployed function: what the user asked for plus the parameters of its
/// synthetic saturation profile.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionSpec {
    pub id: String,
    pub user_alloc: Allocation,
    /// Latency at saturation for input scale 1.
    pub base_latency_s: f64,
    pub sat_cpu_base: f64,
    pub sat_mem_base: f64,
    pub cpu_exponent: f64,
    pub mem_exponent: f64,
    pub sat_jitter: f64,
}

impl FunctionSpec {
    pub fn validate(&self, cfg: &ClusterConfig) -> Result<()> {
        let fail = |what: &str| Err(Error::config(format!("function `{}`: {what}", self.id)));
        if self.id.is_empty() || self.id.contains(',') {
            return fail("id must be non-empty and contain no commas");
        }
        if !validate_allocation(self.user_alloc, cfg) {
            return fail("user allocation violates the per-function caps or quantization");
        }
        if !(self.base_latency_s.is_finite() && self.base_latency_s > 0.0) {
            return fail("base_latency_s must be > 0");
        }
        if !(self.sat_cpu_base.is_finite() && self.sat_cpu_base > 0.0)
            || !(self.sat_mem_base.is_finite() && self.sat_mem_base > 0.0)
        {
            return fail("saturation bases must be > 0");
        }
        if !(self.cpu_exponent.is_finite() && self.cpu_exponent >= 0.0)
            || !(self.mem_exponent.is_finite() && self.mem_exponent >= 0.0)
        {
            return fail("exponents must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.sat_jitter) {
            return fail("sat_jitter must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InvocationState {
    Pending,
    Running,
    Completed,
}

/// One arrival and its lifecycle inside the simulator.
#[derive(Clone, Debug)]
pub struct Invocation {
    pub inv_id: u64,
    pub function_id: String,
    pub arrival_time_s: f64,
    pub input_scale: f64,
    pub saturation: SaturationPoint,
    pub state: InvocationState,
    pub allocation: Option<Allocation>,
    pub start_time_s: Option<f64>,
    pub finish_time_s: Option<f64>,
    pub is_safeguard_invocation: bool,
    pub calibrate_baseline: bool,
}

/// What the platform remembers about one finished invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct InvocationRecord {
    pub inv_id: u64,
    pub function_id: String,
    pub allocation: Allocation,
    pub peak: Usage,
    pub arrival_time_s: f64,
    pub start_time_s: f64,
    pub finish_time_s: f64,
    pub execution_time_s: f64,
    /// End-to-end latency including queue wait.
    pub response_latency_s: f64,
    /// Latency the same invocation would have seen at the user allocation
    /// with no queueing; the slowdown denominator.
    pub reference_latency_s: f64,
    pub slowdown: f64,
    pub was_safeguard: bool,
    pub calibrated_baseline: bool,
}

/// Per-function rolling statistics, updated by the engine.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FunctionHistory {
    pub baseline_latency_s: Option<f64>,
    pub avg_cpu_peak: f64,
    pub avg_mem_peak: f64,
    pub avg_interval_s: f64,
    pub avg_execution_time_s: f64,
    /// Highest peak since the last baseline calibration.
    pub recent_peak: Usage,
    pub last_record: Option<InvocationRecord>,
    pub invocation_count: u64,
    pub last_arrival_s: Option<f64>,
    pub interval_count: u64,
}

fn running_mean(mean: f64, count: u64, sample: f64) -> f64 {
    mean + (sample - mean) / count as f64
}

impl FunctionHistory {
    pub fn observe_arrival(&mut self, t: f64) {
        if let Some(prev) = self.last_arrival_s {
            self.interval_count += 1;
            self.avg_interval_s = running_mean(self.avg_interval_s, self.interval_count, t - prev);
        }
        self.last_arrival_s = Some(t);
    }

    pub fn observe_completion(&mut self, record: &InvocationRecord) {
        self.invocation_count += 1;
        let n = self.invocation_count;
        self.avg_cpu_peak = running_mean(self.avg_cpu_peak, n, record.peak.cpu);
        self.avg_mem_peak = running_mean(self.avg_mem_peak, n, record.peak.mem);
        self.avg_execution_time_s =
            running_mean(self.avg_execution_time_s, n, record.execution_time_s);
        if record.calibrated_baseline || self.baseline_latency_s.is_none() {
            self.baseline_latency_s = Some(record.response_latency_s);
        }
        self.recent_peak = if record.calibrated_baseline || n == 1 {
            record.peak
        } else {
            self.recent_peak.max(record.peak)
        };
        self.last_record = Some(record.clone());
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterConfig {
    pub n_invokers: u32,
    pub invoker_cpu: u32,
    pub invoker_mem_mb: u32,
    pub per_function_max: Allocation,
    pub mem_unit_mb: u32,
    pub cpu_unit: u32,
    pub slo_threshold: f64,
    pub safeguard_threshold: f64,
    pub rng_seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            n_invokers: 10,
            invoker_cpu: 8,
            invoker_mem_mb: 32 * 1024,
            per_function_max: Allocation::new(8, 1024),
            mem_unit_mb: 64,
            cpu_unit: 1,
            slo_threshold: 1.05,
            safeguard_threshold: 0.8,
            rng_seed: 0,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_invokers == 0 || self.invoker_cpu == 0 || self.invoker_mem_mb == 0 {
            return Err(Error::config("cluster must have at least one non-empty invoker"));
        }
        if self.cpu_unit == 0 || self.mem_unit_mb == 0 {
            return Err(Error::config("resource units must be positive"));
        }
        if self.per_function_max.cpu > self.invoker_cpu
            || self.per_function_max.mem > self.invoker_mem_mb
        {
            return Err(Error::config("per-function maximum exceeds invoker capacity"));
        }
        if self.per_function_max.cpu < self.cpu_unit
            || self.per_function_max.mem < self.mem_unit_mb
            || !self.per_function_max.cpu.is_multiple_of(self.cpu_unit)
            || !self.per_function_max.mem.is_multiple_of(self.mem_unit_mb)
        {
            return Err(Error::config("per-function maximum must be a positive multiple of the units"));
        }
        if !(0.0..=1.0).contains(&self.safeguard_threshold) {
            return Err(Error::config("safeguard.threshold must lie in [0, 1]"));
        }
        if !(self.slo_threshold.is_finite() && self.slo_threshold > 0.0) {
            return Err(Error::config("slo_threshold must be positive"));
        }
        Ok(())
    }

    pub fn unit(&self, r: Resource) -> u32 {
        match r {
            Resource::Cpu => self.cpu_unit,
            Resource::Mem => self.mem_unit_mb,
        }
    }

    pub fn cap(&self, r: Resource) -> u32 {
        self.per_function_max.get(r)
    }

    pub fn total_cpu(&self) -> u64 {
        self.n_invokers as u64 * self.invoker_cpu as u64
    }

    pub fn total_mem(&self) -> u64 {
        self.n_invokers as u64 * self.invoker_mem_mb as u64
    }

    /// Rounds a real amount up to the next multiple of the resource unit.
    pub fn quantize_up(&self, r: Resource, amount: f64) -> u32 {
        let unit = self.unit(r) as f64;
        let units = (amount / unit).ceil().max(0.0);
        (units * unit) as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_validation() {
        let cfg = ClusterConfig::default();
        assert!(validate_allocation(Allocation::new(4, 512), &cfg));
        assert!(!validate_allocation(Allocation::new(9, 512), &cfg));
        assert!(!validate_allocation(Allocation::new(4, 500), &cfg));
        assert!(!validate_allocation(Allocation::new(0, 512), &cfg));
        assert!(!validate_allocation(Allocation::new(4, 0), &cfg));
        assert!(validate_allocation(Allocation::new(1, 64), &cfg));
        assert!(validate_allocation(Allocation::new(8, 1024), &cfg));
        assert!(!validate_allocation(Allocation::new(8, 1088), &cfg));
        assert!(Allocation::checked(9, 512, &cfg).is_err());
    }

    #[test]
    fn saturation_rejects_non_positive() {
        assert!(SaturationPoint::new(0.0, 1.0).is_err());
        assert!(SaturationPoint::new(1.0, f64::NAN).is_err());
        assert!(SaturationPoint::new(1.0, 1.0).is_ok());
    }

    #[test]
    fn quantize_up_rounds_to_units() {
        let cfg = ClusterConfig::default();
        assert_eq!(cfg.quantize_up(Resource::Cpu, 2.0), 2);
        assert_eq!(cfg.quantize_up(Resource::Cpu, 2.01), 3);
        assert_eq!(cfg.quantize_up(Resource::Mem, 300.0), 320);
        assert_eq!(cfg.quantize_up(Resource::Mem, 256.0), 256);
    }

    #[test]
    fn cluster_defaults_validate() {
        let cfg = ClusterConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.total_cpu(), 80);
        let bad = ClusterConfig { per_function_max: Allocation::new(16, 1024), ..cfg };
        assert!(bad.validate().is_err());
    }

    fn record(peak: Usage, calibrated: bool) -> InvocationRecord {
        InvocationRecord {
            inv_id: 0,
            function_id: "f".into(),
            allocation: Allocation::new(4, 512),
            peak,
            arrival_time_s: 0.0,
            start_time_s: 0.0,
            finish_time_s: 1.0,
            execution_time_s: 1.0,
            response_latency_s: 1.0,
            reference_latency_s: 1.0,
            slowdown: 1.0,
            was_safeguard: calibrated,
            calibrated_baseline: calibrated,
        }
    }

    #[test]
    fn recent_peak_is_max_since_calibration() {
        let mut h = FunctionHistory::default();
        h.observe_completion(&record(Usage::new(1.0, 100.0), true));
        h.observe_completion(&record(Usage::new(3.0, 400.0), false));
        h.observe_completion(&record(Usage::new(2.0, 300.0), false));
        assert_eq!(h.recent_peak, Usage::new(3.0, 400.0));
        h.observe_completion(&record(Usage::new(1.5, 200.0), true));
        assert_eq!(h.recent_peak, Usage::new(1.5, 200.0));
        assert_eq!(h.invocation_count, 4);
        assert!((h.avg_cpu_peak - 1.875).abs() < 1e-12);
    }

    #[test]
    fn arrival_intervals_average() {
        let mut h = FunctionHistory::default();
        for t in [0.0, 2.0, 6.0] {
            h.observe_arrival(t);
        }
        assert_eq!(h.interval_count, 2);
        assert!((h.avg_interval_s - 3.0).abs() < 1e-12);
    }
}
