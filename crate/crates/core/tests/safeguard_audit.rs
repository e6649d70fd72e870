//! Post-hoc audit of safeguard behaviour. A wrapper logs the history each
//! decision saw, and the checks run over that log once the episode ends.

use std::collections::HashSet;

use harvestsim::agent::{FreyrManager, Policy, SelectionMode};
use harvestsim::domain::{Allocation, ClusterConfig, FunctionHistory, Resource};
use harvestsim::managers::{AllocationRequest, ManagerDecision, ResourceManager};
use harvestsim::scenario::{desk_catalog, synthetic_catalog};
use harvestsim::sim::run;
use harvestsim::workload::{generate_poisson_trace, GeneratorParams, Trace};
use harvestsim::Result;

struct Entry {
    inv_id: u64,
    function_id: String,
    history: FunctionHistory,
    user: Allocation,
    decision: ManagerDecision,
}

struct Audited<M> {
    inner: M,
    log: Vec<Entry>,
}

impl<M: ResourceManager> ResourceManager for Audited<M> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn allocate(&mut self, req: &AllocationRequest<'_>) -> Result<ManagerDecision> {
        let decision = self.inner.allocate(req)?;
        self.log.push(Entry {
            inv_id: req.inv_id,
            function_id: req.function_id.to_string(),
            history: req.history.clone(),
            user: req.user_alloc,
            decision,
        });
        Ok(decision)
    }
}

#[derive(Default)]
struct Tally {
    first: usize,
    spikes: usize,
    harvested: usize,
}

fn audit(trace: &Trace, cfg: &ClusterConfig, seed: u64) -> Tally {
    let policy = Policy::init(seed).unwrap();
    let mut m = Audited { inner: FreyrManager::from_policy(policy, SelectionMode::Sample, seed), log: Vec::new() };
    let result = run(trace, &mut m, cfg).unwrap();
    assert_eq!(m.log.len(), trace.invocations.len());

    let mut tally = Tally::default();
    let mut seen = HashSet::new();
    for e in &m.log {
        let rec = &result.records[e.inv_id as usize];
        assert_eq!(rec.inv_id, e.inv_id);
        assert_eq!(rec.allocation, e.decision.allocation, "engine ran what the manager chose");

        // (a) first invocation of every function
        if seen.insert(e.function_id.clone()) {
            tally.first += 1;
            assert_eq!(e.decision.allocation, e.user, "inv {}", e.inv_id);
            assert!(e.decision.safeguard && e.decision.calibrate_baseline);
            assert!(rec.was_safeguard && rec.calibrated_baseline);
        }

        let Some(last) = &e.history.last_record else {
            assert_eq!(e.decision.allocation, e.user, "no completed predecessor");
            continue;
        };

        // (b) spike on a resource the predecessor was given less of than it asked for
        let spiked = Resource::ALL.iter().any(|&r| {
            let peak = last.peak.get(r);
            peak < e.user.get(r) as f64 && peak / last.allocation.get(r) as f64 >= cfg.safeguard_threshold
        });
        if spiked {
            tally.spikes += 1;
            assert_eq!(e.decision.allocation, e.user, "inv {} after a spike", e.inv_id);
            assert!(e.decision.safeguard && e.decision.calibrate_baseline);
            continue;
        }

        // (c) floor of quantized recent peak plus one unit, capped by the branch bound
        if !e.decision.safeguard {
            tally.harvested += 1;
            for r in Resource::ALL {
                let floor = cfg.quantize_up(r, e.history.recent_peak.get(r)) + cfg.unit(r);
                let hi = if last.peak.get(r) < e.user.get(r) as f64 { e.user.get(r) } else { cfg.cap(r) };
                let got = e.decision.allocation.get(r);
                assert!(got >= floor.min(hi), "inv {} {r:?}: {got} < min({floor}, {hi})", e.inv_id);
                assert!(got <= hi, "inv {} {r:?}: {got} > {hi}", e.inv_id);
            }
        }
    }
    tally
}

#[test]
fn desk_runs_pass_audit() {
    let mut spikes = 0;
    for seed in 1..=3 {
        // the harvest floor keeps most ratios under 0.8, so a lower threshold
        // is needed to see the spike rule fire regularly
        for threshold in [0.8, 0.5] {
            let cfg = ClusterConfig { rng_seed: seed, safeguard_threshold: threshold, ..ClusterConfig::default() };
            let trace = generate_poisson_trace(&desk_catalog(), &GeneratorParams::new(1.0, 600, seed)).unwrap();
            let t = audit(&trace, &cfg, seed);
            assert_eq!(t.first, 4);
            assert!(t.harvested > 0);
            spikes += t.spikes;
        }
    }
    assert!(spikes > 0, "audit never exercised the spike rule");
}

#[test]
fn synthetic_runs_pass_audit() {
    for seed in 10..14 {
        let cfg = ClusterConfig { rng_seed: seed, ..ClusterConfig::default() };
        let catalog = synthetic_catalog(8, seed, &cfg);
        let trace = generate_poisson_trace(&catalog, &GeneratorParams::new(0.5, 800, seed)).unwrap();
        audit(&trace, &cfg, seed);
    }
}

#[test]
fn threshold_extremes() {
    let trace = generate_poisson_trace(&desk_catalog(), &GeneratorParams::new(1.0, 300, 4)).unwrap();
    // every ratio is >= 0, so every over-branch predecessor pins
    let cfg = ClusterConfig { safeguard_threshold: 0.0, ..ClusterConfig::default() };
    let t = audit(&trace, &cfg, 4);
    assert_eq!(t.harvested, 0);
    let cfg = ClusterConfig { safeguard_threshold: 1.0, ..ClusterConfig::default() };
    audit(&trace, &cfg, 4);
}
