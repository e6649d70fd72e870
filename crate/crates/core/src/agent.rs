//! Decision path of the learning manager: enumerate the allocations the
//! safeguard admits, embed each one together with platform and function
//! state, score every option with the shared actor network, and pick one
//! through a softmax over the scores. The critic scores the same vectors;
//! their mean is the baseline used during training.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{Allocation, ClusterConfig, FunctionHistory};
use crate::error::{Error, Result};
use crate::managers::{AllocationRequest, ManagerDecision, ResourceManager};
use crate::neural::{Mlp, DEFAULT_DIMS};
use crate::safeguard::{decide_ranges, SafeguardOutcome};
use crate::sim::PlatformState;

pub const STATE_DIM: usize = 11;

pub type StateVector = [f64; STATE_DIM];

const INFLIGHT_SCALE: f64 = 100.0;
const TIME_SCALE_S: f64 = 60.0;

/// All allocations in the two ranges, cpu-major, both ascending.
pub fn enumerate_options(cpu_range: (u32, u32), mem_range: (u32, u32), cfg: &ClusterConfig) -> Result<Vec<Allocation>> {
    let (c_lo, c_hi) = cpu_range;
    let (m_lo, m_hi) = mem_range;
    if c_lo > c_hi || m_lo > m_hi {
        return Err(Error::contract(format!("empty option range cpu {cpu_range:?} mem {mem_range:?}")));
    }
    let within = |lo: u32, hi: u32, unit: u32, cap: u32| lo >= unit && hi <= cap && lo.is_multiple_of(unit) && hi.is_multiple_of(unit);
    if !within(c_lo, c_hi, cfg.cpu_unit, cfg.per_function_max.cpu)
        || !within(m_lo, m_hi, cfg.mem_unit_mb, cfg.per_function_max.mem)
    {
        return Err(Error::contract(format!("option range cpu {cpu_range:?} mem {mem_range:?} outside the caps")));
    }
    let mut out = Vec::new();
    for cpu in (c_lo..=c_hi).step_by(cfg.cpu_unit as usize) {
        for mem in (m_lo..=m_hi).step_by(cfg.mem_unit_mb as usize) {
            out.push(Allocation::new(cpu, mem));
        }
    }
    Ok(out)
}

/// Flat, roughly unit-scaled feature vector for one candidate option.
pub fn embed(
    platform: &PlatformState,
    history: &FunctionHistory,
    option: Allocation,
    option_index: usize,
    n_options: usize,
    cfg: &ClusterConfig,
) -> Result<StateVector> {
    let baseline = history
        .baseline_latency_s
        .ok_or_else(|| Error::contract("embedding a function without a calibrated baseline"))?;
    let max_cpu = cfg.per_function_max.cpu as f64;
    let max_mem = cfg.per_function_max.mem as f64;
    Ok([
        platform.avail_cpu as f64 / cfg.total_cpu() as f64,
        platform.avail_mem as f64 / cfg.total_mem() as f64,
        platform.inflight_request_num as f64 / INFLIGHT_SCALE,
        history.avg_cpu_peak / max_cpu,
        history.avg_mem_peak / max_mem,
        history.avg_interval_s / TIME_SCALE_S,
        history.avg_execution_time_s / TIME_SCALE_S,
        baseline / TIME_SCALE_S,
        option.cpu as f64 / max_cpu,
        option.mem as f64 / max_mem,
        option_index as f64 / (n_options.saturating_sub(1).max(1)) as f64,
    ])
}

/// Softmax with the maximum subtracted first.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `ln softmax(scores)[index]` without forming the probabilities.
pub fn log_softmax_at(scores: &[f64], index: usize) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores[index] - lse
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionMode {
    /// Draw from the softmax distribution (training).
    Sample,
    /// Take the highest-probability option, lowest index on ties.
    Greedy,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(SelectionMode::Sample),
            "greedy" => Ok(SelectionMode::Greedy),
            other => Err(Error::config(format!("freyr.mode must be `sample` or `greedy`, got `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub index: usize,
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub log_prob: f64,
    pub critic_values: Vec<f64>,
    pub critic_mean: f64,
}

pub fn decide<R: Rng + ?Sized>(
    states: &[StateVector],
    actor: &Mlp,
    critic: &Mlp,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<Decision> {
    if states.is_empty() {
        return Err(Error::contract("decide needs at least one option"));
    }
    let scores = states.iter().map(|s| actor.forward(s)).collect::<Result<Vec<_>>>()?;
    let critic_values = states.iter().map(|s| critic.forward(s)).collect::<Result<Vec<_>>>()?;
    let probabilities = softmax(&scores);
    let index = match mode {
        SelectionMode::Greedy => {
            let mut best = 0;
            for (i, p) in probabilities.iter().enumerate() {
                if *p > probabilities[best] {
                    best = i;
                }
            }
            best
        }
        SelectionMode::Sample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = probabilities.len() - 1;
            for (i, p) in probabilities.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            // never land on a zero-probability tail entry through rounding
            while probabilities[pick] == 0.0 && pick > 0 {
                pick -= 1;
            }
            pick
        }
    };
    let critic_mean = critic_values.iter().sum::<f64>() / critic_values.len() as f64;
    Ok(Decision { index, log_prob: log_softmax_at(&scores, index), scores, probabilities, critic_values, critic_mean })
}

/// Actor and critic saved together; the file holds two network blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl Policy {
    pub fn init(seed: u64) -> Result<Self> {
        Ok(Policy {
            actor: Mlp::init(&DEFAULT_DIMS, seed)?,
            critic: Mlp::init(&DEFAULT_DIMS, seed ^ 0x5DEE_CE66)?,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.actor.parameter_count() + self.critic.parameter_count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.actor.write_to(&mut buf)?;
        self.critic.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let actor = Mlp::read_from(&mut lines)?;
        let critic = Mlp::read_from(&mut lines)?;
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::Format("trailing data after critic block".into()));
        }
        for net in [&actor, &critic] {
            if net.dims().first() != Some(&STATE_DIM) {
                return Err(Error::Format(format!("network input width {:?} is not {STATE_DIM}", net.dims().first())));
            }
        }
        Ok(Policy { actor, critic })
    }
}

/// What the policy saw and did on one non-safeguard arrival.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyStep {
    pub inv_id: u64,
    pub states: Vec<StateVector>,
    pub chosen: usize,
    pub log_prob: f64,
    pub critic_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FreyrOutcome {
    pub allocation: Allocation,
    pub safeguard: SafeguardOutcome,
    /// Absent for safeguard invocations, which bypass the networks.
    pub decision: Option<(Vec<Allocation>, Vec<StateVector>, Decision)>,
}

pub fn freyr_allocate<R: Rng + ?Sized>(
    req: &AllocationRequest<'_>,
    actor: &Mlp,
    critic: &Mlp,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<FreyrOutcome> {
    let cfg = req.cluster;
    let safeguard = decide_ranges(req.history, req.user_alloc, cfg);
    if safeguard.is_safeguard() {
        return Ok(FreyrOutcome { allocation: req.user_alloc, safeguard, decision: None });
    }
    let options = enumerate_options(safeguard.cpu_range, safeguard.mem_range, cfg)?;
    let states = options
        .iter()
        .enumerate()
        .map(|(i, o)| embed(&req.platform, req.history, *o, i, options.len(), cfg))
        .collect::<Result<Vec<_>>>()?;
    let decision = decide(&states, actor, critic, mode, rng)?;
    Ok(FreyrOutcome { allocation: options[decision.index], safeguard, decision: Some((options, states, decision)) })
}

/// The learning manager as a [`ResourceManager`]. Optionally records one
/// [`PolicyStep`] per network decision for training.
#[derive(Clone, Debug)]
pub struct FreyrManager {
    pub actor: Mlp,
    pub critic: Mlp,
    pub mode: SelectionMode,
    rng: ChaCha8Rng,
    recording: bool,
    steps: Vec<PolicyStep>,
}

impl FreyrManager {
    pub fn from_policy(policy: Policy, mode: SelectionMode, seed: u64) -> Self {
        FreyrManager::new(policy.actor, policy.critic, mode, seed)
    }

    pub fn new(actor: Mlp, critic: Mlp, mode: SelectionMode, seed: u64) -> Self {
        FreyrManager { actor, critic, mode, rng: ChaCha8Rng::seed_from_u64(seed), recording: false, steps: Vec::new() }
    }

    pub fn recording(mut self) -> Self {
        self.recording = true;
        self
    }

    pub fn take_steps(&mut self) -> Vec<PolicyStep> {
        std::mem::take(&mut self.steps)
    }
}

impl ResourceManager for FreyrManager {
    fn name(&self) -> &str {
        "freyr"
    }

    fn allocate(&mut self, req: &AllocationRequest<'_>) -> Result<ManagerDecision> {
        let out = freyr_allocate(req, &self.actor, &self.critic, self.mode, &mut self.rng)?;
        if let (true, Some((_, states, d))) = (self.recording, out.decision.as_ref()) {
            self.steps.push(PolicyStep {
                inv_id: req.inv_id,
                states: states.clone(),
                chosen: d.index,
                log_prob: d.log_prob,
                critic_mean: d.critic_mean,
            });
        }
        Ok(ManagerDecision {
            allocation: out.allocation,
            safeguard: out.safeguard.is_safeguard(),
            calibrate_baseline: out.safeguard.calibrate_baseline,
        })
    }
}
