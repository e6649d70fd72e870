//! Deterministic discrete-event simulator of an invoker cluster.
//!
//! Each invoker gates admission with two counting semaphores (CPU cores and
//! MB of memory). Arrivals ask the resource manager for an allocation and are
//! placed on the lowest-id invoker that fits; anything that does not fit waits
//! in a FIFO queue that is drained on every completion.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{
    validate_allocation, Allocation, ClusterConfig, FunctionHistory, FunctionSpec, Invocation,
    InvocationRecord, InvocationState,
};
use crate::error::{Error, Result};
use crate::managers::{AllocationRequest, ResourceManager};
use crate::metrics::slowdown;
use crate::perf_model::{execution_latency, realize_saturation, usage_peak, LatencyModelParams};
use crate::workload::Trace;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Invoker {
    pub id: usize,
    pub capacity: Allocation,
    pub available_cpu: u32,
    pub available_mem: u32,
}

impl Invoker {
    fn fits(&self, alloc: Allocation) -> bool {
        self.available_cpu >= alloc.cpu && self.available_mem >= alloc.mem
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlatformState {
    pub avail_cpu: u64,
    pub avail_mem: u64,
    pub inflight_request_num: u64,
    pub clock_s: f64,
}

/// Picks the lowest-id invoker with room for `alloc` and claims the
/// resources on it. `None` means the invocation must queue.
pub fn schedule(alloc: Allocation, invokers: &mut [Invoker]) -> Option<usize> {
    let inv = invokers.iter_mut().find(|i| i.fits(alloc))?;
    inv.available_cpu -= alloc.cpu;
    inv.available_mem -= alloc.mem;
    Some(inv.id)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    // Completion sorts first so that resources freed at time t are visible to
    // arrivals at the same t.
    Completion,
    Arrival,
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    kind: EventKind,
    inv_id: u64,
    slot: usize,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        other
            .time
            .total_cmp(&self.time)
            .then(other.kind.cmp(&self.kind))
            .then(other.inv_id.cmp(&self.inv_id))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogKind {
    Arrival,
    Start,
    Completion,
}

impl fmt::Display for LogKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogKind::Arrival => "arrival",
            LogKind::Start => "start",
            LogKind::Completion => "completion",
        })
    }
}

/// One line of the optional per-event log:
/// `event_kind,clock_s,inv_id,function_id,cpu,mem`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventLogEntry {
    pub kind: LogKind,
    pub clock_s: f64,
    pub inv_id: u64,
    pub function_id: String,
    pub cpu: u32,
    pub mem: u32,
}

impl fmt::Display for EventLogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{},{},{}", self.kind, self.clock_s, self.inv_id, self.function_id, self.cpu, self.mem)
    }
}

pub const EVENT_LOG_HEADER: &str = "event_kind,clock_s,inv_id,function_id,cpu,mem";

/// The manager's answer for one arrival, as seen by the engine.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionLog {
    pub inv_id: u64,
    pub function_id: String,
    pub arrival_time_s: f64,
    pub allocation: Allocation,
    pub safeguard: bool,
    pub calibrate_baseline: bool,
}

/// Slowdowns of the invocations that completed after the previous arrival
/// and no later than this one.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardInterval {
    pub inv_id: u64,
    pub slowdowns: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeResult {
    /// Sorted by invocation id.
    pub records: Vec<InvocationRecord>,
    /// One entry per arrival, in event order.
    pub reward_intervals: Vec<RewardInterval>,
    /// Completions after the last arrival.
    pub tail_slowdowns: Vec<f64>,
    /// One entry per arrival, in event order.
    pub decisions: Vec<DecisionLog>,
    pub event_log: Vec<EventLogEntry>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub event_log: bool,
}

struct Slot {
    inv: Invocation,
    spec_idx: usize,
    decided: Option<Allocation>,
    invoker: Option<usize>,
    exec_s: f64,
}

/// A single simulation run. Drive it with [`Engine::step`] or [`run`].
pub struct Engine<'t> {
    cfg: ClusterConfig,
    catalog: &'t [FunctionSpec],
    slots: Vec<Slot>,
    invokers: Vec<Invoker>,
    histories: HashMap<String, FunctionHistory>,
    events: BinaryHeap<Event>,
    waiting: VecDeque<usize>,
    clock: f64,
    inflight: u64,
    interval: Vec<f64>,
    result: EpisodeResult,
    opts: RunOptions,
}

fn invocation_seed(seed: u64, inv_id: u64) -> u64 {
    // splitmix64 finalizer keeps neighbouring ids decorrelated
    let mut z = seed ^ inv_id.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<'t> Engine<'t> {
    pub fn new(trace: &'t Trace, cfg: &ClusterConfig, opts: RunOptions) -> Result<Self> {
        cfg.validate()?;
        trace.validate(cfg)?;
        let index: HashMap<&str, usize> =
            trace.catalog.iter().enumerate().map(|(i, f)| (f.id.as_str(), i)).collect();
        let mut slots = Vec::with_capacity(trace.invocations.len());
        let mut events = BinaryHeap::with_capacity(trace.invocations.len() * 2);
        for e in &trace.invocations {
            let spec_idx = index[e.function_id.as_str()];
            let mut rng = ChaCha8Rng::seed_from_u64(invocation_seed(cfg.rng_seed, e.inv_id));
            let saturation = realize_saturation(&trace.catalog[spec_idx], e.input_scale, &mut rng, cfg);
            events.push(Event { time: e.arrival_time_s, kind: EventKind::Arrival, inv_id: e.inv_id, slot: slots.len() });
            slots.push(Slot {
                inv: Invocation {
                    inv_id: e.inv_id,
                    function_id: e.function_id.clone(),
                    arrival_time_s: e.arrival_time_s,
                    input_scale: e.input_scale,
                    saturation,
                    state: InvocationState::Pending,
                    allocation: None,
                    start_time_s: None,
                    finish_time_s: None,
                    is_safeguard_invocation: false,
                    calibrate_baseline: false,
                },
                spec_idx,
                decided: None,
                invoker: None,
                exec_s: 0.0,
            });
        }
        let invokers = (0..cfg.n_invokers as usize)
            .map(|id| Invoker {
                id,
                capacity: Allocation::new(cfg.invoker_cpu, cfg.invoker_mem_mb),
                available_cpu: cfg.invoker_cpu,
                available_mem: cfg.invoker_mem_mb,
            })
            .collect();
        Ok(Engine {
            cfg: cfg.clone(),
            catalog: &trace.catalog,
            slots,
            invokers,
            histories: HashMap::new(),
            events,
            waiting: VecDeque::new(),
            clock: 0.0,
            inflight: 0,
            interval: Vec::new(),
            result: EpisodeResult::default(),
            opts,
        })
    }

    pub fn snapshot(&self) -> PlatformState {
        PlatformState {
            avail_cpu: self.invokers.iter().map(|i| i.available_cpu as u64).sum(),
            avail_mem: self.invokers.iter().map(|i| i.available_mem as u64).sum(),
            inflight_request_num: self.inflight,
            clock_s: self.clock,
        }
    }

    pub fn invokers(&self) -> &[Invoker] {
        &self.invokers
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn history(&self, function_id: &str) -> Option<&FunctionHistory> {
        self.histories.get(function_id)
    }

    /// Running invocations as (invoker id, allocation).
    pub fn running(&self) -> impl Iterator<Item = (usize, Allocation)> + '_ {
        self.slots
            .iter()
            .filter(|s| s.inv.state == InvocationState::Running)
            .map(|s| (s.invoker.expect("running on an invoker"), s.inv.allocation.expect("running has allocation")))
    }

    pub fn is_done(&self) -> bool {
        self.events.is_empty()
    }

    /// Processes one event. Returns `Ok(false)` once the queue is empty.
    pub fn step(&mut self, manager: &mut dyn ResourceManager) -> Result<bool> {
        let Some(ev) = self.events.pop() else { return Ok(false) };
        self.clock = ev.time;
        match ev.kind {
            EventKind::Arrival => self.on_arrival(ev.slot, manager)?,
            EventKind::Completion => self.on_completion(ev.slot)?,
        }
        Ok(true)
    }

    pub fn finish(mut self, manager: &mut dyn ResourceManager) -> Result<EpisodeResult> {
        while self.step(manager)? {}
        debug_assert!(self.waiting.is_empty() && self.inflight == 0);
        let mut result = std::mem::take(&mut self.result);
        result.tail_slowdowns = std::mem::take(&mut self.interval);
        result.records.sort_by_key(|r| r.inv_id);
        Ok(result)
    }

    fn on_arrival(&mut self, slot: usize, manager: &mut dyn ResourceManager) -> Result<()> {
        let (inv_id, function_id, user_alloc) = {
            let s = &self.slots[slot];
            (s.inv.inv_id, s.inv.function_id.clone(), self.catalog[s.spec_idx].user_alloc)
        };
        self.result.reward_intervals.push(RewardInterval { inv_id, slowdowns: std::mem::take(&mut self.interval) });

        let history = self.histories.entry(function_id.clone()).or_default();
        history.observe_arrival(self.clock);
        let platform = self.snapshot();
        let history = &self.histories[&function_id];
        let req = AllocationRequest {
            inv_id,
            function_id: &function_id,
            arrival_time_s: self.clock,
            history,
            platform,
            user_alloc,
            cluster: &self.cfg,
        };
        let decision = manager.allocate(&req)?;
        let alloc = decision.allocation;
        if !validate_allocation(alloc, &self.cfg) {
            return Err(Error::InvalidAllocation { manager: manager.name().to_string(), inv_id, cpu: alloc.cpu, mem: alloc.mem });
        }

        let s = &mut self.slots[slot];
        s.decided = Some(alloc);
        s.inv.is_safeguard_invocation = decision.safeguard;
        s.inv.calibrate_baseline = decision.calibrate_baseline;
        self.inflight += 1;
        self.result.decisions.push(DecisionLog {
            inv_id,
            function_id: function_id.clone(),
            arrival_time_s: self.clock,
            allocation: alloc,
            safeguard: decision.safeguard,
            calibrate_baseline: decision.calibrate_baseline,
        });
        self.log(LogKind::Arrival, inv_id, &function_id, alloc);

        if self.waiting.is_empty() {
            if let Some(invoker) = schedule(alloc, &mut self.invokers) {
                self.start(slot, invoker);
                return Ok(());
            }
        }
        self.waiting.push_back(slot);
        Ok(())
    }

    fn start(&mut self, slot: usize, invoker: usize) {
        let s = &mut self.slots[slot];
        let alloc = s.decided.expect("decided before start");
        let spec = &self.catalog[s.spec_idx];
        let exec = execution_latency(
            &s.inv.saturation,
            alloc,
            spec.base_latency_s * s.inv.input_scale,
            LatencyModelParams::from(spec),
        );
        s.inv.state = InvocationState::Running;
        s.inv.allocation = Some(alloc);
        s.inv.start_time_s = Some(self.clock);
        s.invoker = Some(invoker);
        s.exec_s = exec;
        let inv_id = s.inv.inv_id;
        let function_id = s.inv.function_id.clone();
        self.events.push(Event { time: self.clock + exec, kind: EventKind::Completion, inv_id, slot });
        self.log(LogKind::Start, inv_id, &function_id, alloc);
    }

    fn on_completion(&mut self, slot: usize) -> Result<()> {
        let s = &mut self.slots[slot];
        let alloc = s.inv.allocation.expect("running has allocation");
        let invoker = &mut self.invokers[s.invoker.expect("running on an invoker")];
        invoker.available_cpu += alloc.cpu;
        invoker.available_mem += alloc.mem;
        s.inv.state = InvocationState::Completed;
        s.inv.finish_time_s = Some(self.clock);

        let spec = &self.catalog[s.spec_idx];
        let params = LatencyModelParams::from(spec);
        let saturated = spec.base_latency_s * s.inv.input_scale;
        let start = s.inv.start_time_s.expect("started");
        let reference = execution_latency(&s.inv.saturation, spec.user_alloc, saturated, params);
        // wait plus duration, so an unqueued run at the user allocation
        // reproduces its reference bit for bit
        let response = (start - s.inv.arrival_time_s) + s.exec_s;
        let record = InvocationRecord {
            inv_id: s.inv.inv_id,
            function_id: s.inv.function_id.clone(),
            allocation: alloc,
            peak: usage_peak(&s.inv.saturation, alloc),
            arrival_time_s: s.inv.arrival_time_s,
            start_time_s: start,
            finish_time_s: self.clock,
            execution_time_s: s.exec_s,
            response_latency_s: response,
            reference_latency_s: reference,
            slowdown: slowdown(response, reference)?,
            was_safeguard: s.inv.is_safeguard_invocation,
            calibrated_baseline: s.inv.calibrate_baseline,
        };
        self.histories.entry(record.function_id.clone()).or_default().observe_completion(&record);
        self.inflight -= 1;
        self.interval.push(record.slowdown);
        self.log(LogKind::Completion, record.inv_id, &record.function_id, alloc);
        self.result.records.push(record);

        while let Some(&head) = self.waiting.front() {
            let alloc = self.slots[head].decided.expect("queued invocations are decided");
            match schedule(alloc, &mut self.invokers) {
                Some(invoker) => {
                    self.waiting.pop_front();
                    self.start(head, invoker);
                }
                None => break,
            }
        }
        Ok(())
    }

    fn log(&mut self, kind: LogKind, inv_id: u64, function_id: &str, alloc: Allocation) {
        if self.opts.event_log {
            self.result.event_log.push(EventLogEntry {
                kind,
                clock_s: self.clock,
                inv_id,
                function_id: function_id.to_string(),
                cpu: alloc.cpu,
                mem: alloc.mem,
            });
        }
    }
}

/// Runs `trace` to completion under `manager`.
pub fn run(trace: &Trace, manager: &mut dyn ResourceManager, cfg: &ClusterConfig) -> Result<EpisodeResult> {
    run_with(trace, manager, cfg, RunOptions::default())
}

pub fn run_with(
    trace: &Trace,
    manager: &mut dyn ResourceManager,
    cfg: &ClusterConfig,
    opts: RunOptions,
) -> Result<EpisodeResult> {
    Engine::new(trace, cfg, opts)?.finish(manager)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::managers::{FixedManager, ManagerDecision};
    use crate::workload::TraceEntry;

    fn spec(id: &str, user: Allocation, sat: (f64, f64)) -> FunctionSpec {
        FunctionSpec {
            id: id.into(),
            user_alloc: user,
            base_latency_s: 10.0,
            sat_cpu_base: sat.0,
            sat_mem_base: sat.1,
            cpu_exponent: 1.0,
            mem_exponent: 1.0,
            sat_jitter: 0.0,
        }
    }

    fn trace(catalog: Vec<FunctionSpec>, arrivals: &[(&str, f64)]) -> Trace {
        Trace {
            invocations: arrivals
                .iter()
                .enumerate()
                .map(|(i, (f, t))| TraceEntry { inv_id: i as u64, function_id: f.to_string(), arrival_time_s: *t, input_scale: 1.0 })
                .collect(),
            catalog,
        }
    }

    #[test]
    fn empty_trace_yields_nothing() {
        let t = trace(vec![spec("a", Allocation::new(2, 256), (1.0, 128.0))], &[]);
        let r = run(&t, &mut FixedManager, &ClusterConfig::default()).unwrap();
        assert!(r.records.is_empty());
        assert!(r.reward_intervals.is_empty());
    }

    #[test]
    fn single_fixed_invocation_has_unit_slowdown() {
        let t = trace(vec![spec("a", Allocation::new(4, 512), (2.0, 256.0))], &[("a", 1.0)]);
        let r = run(&t, &mut FixedManager, &ClusterConfig::default()).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.records[0].allocation, Allocation::new(4, 512));
        assert_eq!(r.records[0].slowdown, 1.0);
        assert_eq!(r.records[0].response_latency_s, 10.0);
    }

    #[test]
    fn full_invoker_forces_queueing() {
        // two 8-core invocations, one 8-core invoker: the second waits 10 s
        let cfg = ClusterConfig { n_invokers: 1, ..ClusterConfig::default() };
        let t = trace(vec![spec("a", Allocation::new(8, 512), (8.0, 256.0))], &[("a", 0.0), ("a", 0.0)]);
        let r = run_with(&t, &mut FixedManager, &cfg, RunOptions { event_log: true }).unwrap();
        assert_eq!(r.records[0].start_time_s, 0.0);
        assert_eq!(r.records[1].start_time_s, 10.0);
        assert_eq!(r.records[1].finish_time_s, 20.0);
        assert_eq!(r.records[1].response_latency_s, 20.0);
        assert_eq!(r.records[1].slowdown, 2.0);
        let kinds: Vec<String> = r.event_log.iter().map(|e| format!("{}:{}", e.kind, e.inv_id)).collect();
        assert_eq!(kinds, ["arrival:0", "start:0", "arrival:1", "completion:0", "start:1", "completion:1"]);
        assert_eq!(r.event_log[3].to_string(), "completion,10,0,a,8,512");
    }

    #[test]
    fn schedule_picks_lowest_fitting_invoker() {
        let mk = |id, cpu| Invoker { id, capacity: Allocation::new(8, 32768), available_cpu: cpu, available_mem: 32768 };
        let mut invs = vec![mk(0, 4), mk(1, 8)];
        assert_eq!(schedule(Allocation::new(8, 1024), &mut invs), Some(1));
        assert_eq!(invs[1].available_cpu, 0);
        assert_eq!(invs[1].available_mem, 32768 - 1024);
        assert_eq!(schedule(Allocation::new(2, 64), &mut invs), Some(0));
        let mut full = vec![mk(0, 0), mk(1, 0)];
        assert_eq!(schedule(Allocation::new(1, 64), &mut full), None);
    }

    #[test]
    fn snapshot_tracks_capacity_and_inflight() {
        let t = trace(vec![spec("a", Allocation::new(4, 512), (2.0, 256.0))], &[("a", 0.0)]);
        let cfg = ClusterConfig::default();
        let mut engine = Engine::new(&t, &cfg, RunOptions::default()).unwrap();
        let fresh = engine.snapshot();
        assert_eq!(fresh.avail_cpu, 80);
        assert_eq!(fresh.avail_mem, 10 * 32768);
        assert_eq!(fresh.inflight_request_num, 0);
        engine.step(&mut FixedManager).unwrap();
        let busy = engine.snapshot();
        assert_eq!(busy.avail_cpu, 76);
        assert_eq!(busy.avail_mem, 10 * 32768 - 512);
        assert_eq!(busy.inflight_request_num, 1);
        assert_eq!(engine.running().count(), 1);
        engine.step(&mut FixedManager).unwrap();
        assert_eq!(engine.snapshot().avail_cpu, 80);
        assert_eq!(engine.snapshot().inflight_request_num, 0);
    }

    #[test]
    fn first_completion_sets_baseline_and_recent_peak_is_max() {
        let t = Trace {
            catalog: vec![spec("a", Allocation::new(4, 512), (3.0, 400.0))],
            invocations: vec![
                TraceEntry { inv_id: 0, function_id: "a".into(), arrival_time_s: 0.0, input_scale: 1.0 },
                TraceEntry { inv_id: 1, function_id: "a".into(), arrival_time_s: 20.0, input_scale: 0.75 },
            ],
        };
        let cfg = ClusterConfig::default();
        let mut engine = Engine::new(&t, &cfg, RunOptions::default()).unwrap();
        let mut m = FixedManager;
        engine.step(&mut m).unwrap();
        engine.step(&mut m).unwrap();
        let h = engine.history("a").unwrap();
        assert_eq!(h.baseline_latency_s, Some(10.0));
        assert_eq!(h.recent_peak.cpu, 3.0);
        while engine.step(&mut m).unwrap() {}
        let h = engine.history("a").unwrap();
        assert_eq!(h.recent_peak.cpu, 3.0);
        assert_eq!(h.recent_peak.mem, 400.0);
        assert_eq!(h.invocation_count, 2);
    }

    struct Bogus;
    impl ResourceManager for Bogus {
        fn name(&self) -> &str {
            "bogus"
        }
        fn allocate(&mut self, _: &AllocationRequest<'_>) -> Result<ManagerDecision> {
            Ok(ManagerDecision::plain(Allocation::new(9, 100)))
        }
    }

    #[test]
    fn invalid_manager_allocation_is_an_error() {
        let t = trace(vec![spec("a", Allocation::new(4, 512), (2.0, 256.0))], &[("a", 0.0)]);
        let err = run(&t, &mut Bogus, &ClusterConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidAllocation { cpu: 9, mem: 100, .. }));
    }

    #[test]
    fn completions_at_arrival_time_count_toward_that_arrival() {
        let t = trace(vec![spec("a", Allocation::new(4, 512), (2.0, 256.0))], &[("a", 0.0), ("a", 10.0), ("a", 30.0)]);
        let r = run(&t, &mut FixedManager, &ClusterConfig::default()).unwrap();
        let sizes: Vec<usize> = r.reward_intervals.iter().map(|i| i.slowdowns.len()).collect();
        assert_eq!(sizes, [0, 1, 1]);
        assert_eq!(r.tail_slowdowns.len(), 1);
    }
}
