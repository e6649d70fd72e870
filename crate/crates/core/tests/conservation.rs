use harvestsim::agent::{FreyrManager, Policy, SelectionMode};
use harvestsim::domain::ClusterConfig;
use harvestsim::managers::{FixedManager, GreedyManager, GreedyParams, ResourceManager};
use harvestsim::scenario::synthetic_catalog;
use harvestsim::sim::{Engine, RunOptions};
use harvestsim::workload::{generate_poisson_trace, GeneratorParams};
use proptest::prelude::*;

const CALLS: usize = 5000; // one arrival and one completion each

fn manager(kind: u8, seed: u64) -> Box<dyn ResourceManager> {
    match kind {
        0 => Box::new(FixedManager),
        1 => Box::new(GreedyManager::new(GreedyParams::default())),
        _ => Box::new(FreyrManager::from_policy(Policy::init(seed).unwrap(), SelectionMode::Sample, seed)),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn allocated_plus_available_equals_capacity(
        seed in any::<u64>(),
        kind in 0u8..3,
        n_functions in 2usize..12,
        mean_iat in 0.05f64..2.0,
        n_invokers in 1u32..5,
    ) {
        let cfg = ClusterConfig { n_invokers, rng_seed: seed, ..ClusterConfig::default() };
        let catalog = synthetic_catalog(n_functions, seed, &cfg);
        let trace = generate_poisson_trace(&catalog, &GeneratorParams::new(mean_iat, CALLS, seed)).unwrap();
        let mut m = manager(kind, seed);
        let mut engine = Engine::new(&trace, &cfg, RunOptions::default()).unwrap();
        let mut events = 0usize;
        while engine.step(&mut m).unwrap() {
            events += 1;
            let mut used = vec![(0u32, 0u32); engine.invokers().len()];
            for (inv, alloc) in engine.running() {
                used[inv].0 += alloc.cpu;
                used[inv].1 += alloc.mem;
            }
            for (i, u) in engine.invokers().iter().zip(&used) {
                prop_assert_eq!(i.available_cpu + u.0, i.capacity.cpu);
                prop_assert_eq!(i.available_mem + u.1, i.capacity.mem);
            }
        }
        prop_assert_eq!(events, 2 * CALLS);
        let result = engine.finish(&mut m).unwrap();
        prop_assert_eq!(result.records.len(), CALLS);
    }
}
