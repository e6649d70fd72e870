//! Ready-made catalogs and traces for desk-scale experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{Allocation, ClusterConfig, FunctionSpec};
use crate::error::Result;
use crate::workload::{generate_poisson_trace, GeneratorParams, Trace};

pub const DESK_CALLS: usize = 250;
pub const DESK_MEAN_IAT_S: f64 = 2.2;
/// Number of distinct training traces cycled through during training.
pub const DESK_TRAIN_POOL: usize = 10;

fn spec(id: &str, user: (u32, u32), base_latency_s: f64, sat: (f64, f64), exps: (f64, f64), jitter: f64) -> FunctionSpec {
    FunctionSpec {
        id: id.to_string(),
        user_alloc: Allocation::new(user.0, user.1),
        base_latency_s,
        sat_cpu_base: sat.0,
        sat_mem_base: sat.1,
        cpu_exponent: exps.0,
        mem_exponent: exps.1,
        sat_jitter: jitter,
    }
}

/// Four functions: two that ask for far more than they use and two
/// CPU-bound ones that ask for too few cores. Every function's memory
/// request stays above its largest possible saturation, so the spike test
/// always has an over-provisioned resource to look at.
pub fn desk_catalog() -> Vec<FunctionSpec> {
    vec![
        spec("thumbnail", (4, 768), 2.0, (1.0, 160.0), (2.0, 1.0), 0.1),
        spec("compress", (6, 1024), 3.0, (1.5, 256.0), (2.0, 1.0), 0.1),
        spec("train", (2, 768), 8.0, (5.0, 128.0), (2.0, 1.0), 0.1),
        spec("render", (3, 512), 6.0, (5.5, 96.0), (2.0, 1.0), 0.1),
    ]
}

/// `n` random functions, roughly half over- and half under-provisioned on
/// CPU, with memory always requested generously.
pub fn synthetic_catalog(n: usize, seed: u64, cfg: &ClusterConfig) -> Vec<FunctionSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_cpu = cfg.per_function_max.cpu;
    let unit = cfg.mem_unit_mb;
    let max_mem_units = cfg.per_function_max.mem / unit;
    (0..n)
        .map(|i| {
            let user_cpu = rng.random_range(1..=max_cpu);
            let user_mem = rng.random_range((max_mem_units / 2).max(1)..=max_mem_units) * unit;
            let over = rng.random_bool(0.5);
            let sat_cpu = if over {
                user_cpu as f64 * rng.random_range(0.15..0.4)
            } else {
                (user_cpu as f64 * rng.random_range(1.5..3.0)).min(max_cpu as f64 * 0.7)
            };
            // at most a fifth of the request at input scale 1
            let sat_mem = user_mem as f64 * rng.random_range(0.05..0.2);
            spec(
                &format!("fn{i:02}"),
                (user_cpu, user_mem),
                rng.random_range(0.5..8.0),
                (sat_cpu.max(0.1), sat_mem),
                (1.0, 0.5),
                0.1,
            )
        })
        .collect()
}

pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Training pool for one seed.
pub fn desk_training_traces(seed: u64) -> Result<Vec<Trace>> {
    let catalog = desk_catalog();
    (0..DESK_TRAIN_POOL as u64)
        .map(|i| generate_poisson_trace(&catalog, &GeneratorParams::new(DESK_MEAN_IAT_S, DESK_CALLS, stream_seed(seed, i + 1))))
        .collect()
}

/// A trace drawn from a stream no training pool uses.
pub fn desk_held_out_trace(seed: u64) -> Result<Trace> {
    generate_poisson_trace(&desk_catalog(), &GeneratorParams::new(DESK_MEAN_IAT_S, DESK_CALLS, stream_seed(seed, 0xFFFF)))
}
