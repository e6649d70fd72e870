//! PPO-clip training of the learning manager.
//!
//! One episode is one full engine run over a training trace with the agent
//! sampling from its policy. Each non-safeguard decision becomes a
//! trajectory step; the rewards are sums over completions between
//! consecutive arrivals, and the whole trajectory feeds a single
//! full-batch update of a few epochs for each network.

use std::fmt;
use std::io::Write;

use crate::agent::{log_softmax_at, softmax, FreyrManager, Policy, PolicyStep, SelectionMode, StateVector};
use crate::domain::ClusterConfig;
use crate::error::{Error, Result};
use crate::metrics::{avg_slowdown, safe_invocation_rate};
use crate::neural::{AdamW, Mlp};
use crate::sim::{run, EpisodeResult};
use crate::workload::Trace;

#[derive(Clone, Debug, PartialEq)]
pub struct PpoConfig {
    pub epochs_per_update: usize,
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub lr: f64,
    pub episodes: usize,
    pub reward_bonus: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig { epochs_per_update: 4, clip_epsilon: 0.2, gamma: 1.0, lr: 1e-3, episodes: 200, reward_bonus: 1.0, seed: 0 }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::config("trainer.clip must lie in (0, 1)"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("trainer.gamma must lie in (0, 1]"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("trainer.lr must be positive"));
        }
        if self.epochs_per_update == 0 {
            return Err(Error::config("trainer.epochs must be at least 1"));
        }
        if !self.reward_bonus.is_finite() {
            return Err(Error::config("trainer.reward_bonus must be finite"));
        }
        Ok(())
    }
}

/// `-sum(s) + c * #(s < 1) - c * #(s > 1)`.
pub fn compute_reward(slowdowns: &[f64], c: f64) -> f64 {
    slowdowns
        .iter()
        .map(|s| {
            let bonus = if *s < 1.0 {
                c
            } else if *s > 1.0 {
                -c
            } else {
                0.0
            };
            bonus - s
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub states: Vec<StateVector>,
    pub chosen: usize,
    pub old_log_prob: f64,
    pub reward: f64,
    pub critic_mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

/// Sum of every reward interval of the episode, tail included.
pub fn episode_reward(result: &EpisodeResult, c: f64) -> f64 {
    result.reward_intervals.iter().map(|iv| compute_reward(&iv.slowdowns, c)).sum::<f64>()
        + compute_reward(&result.tail_slowdowns, c)
}

/// Pairs recorded policy steps with their rewards. A step's reward covers the
/// completions since the previous arrival. Intervals that end at a safeguard
/// arrival carry over to the next policy step, and whatever is left after the
/// last policy step (tail completions included) goes to that step, so the
/// rewards sum to [`episode_reward`].
pub fn build_trajectory(steps: Vec<PolicyStep>, result: &EpisodeResult, c: f64) -> Result<Trajectory> {
    let mut out = Vec::with_capacity(steps.len());
    let mut steps = steps.into_iter().peekable();
    let mut pending = 0.0;
    for iv in &result.reward_intervals {
        pending += compute_reward(&iv.slowdowns, c);
        if steps.peek().is_some_and(|s| s.inv_id == iv.inv_id) {
            let s = steps.next().unwrap();
            out.push(TrajectoryStep {
                states: s.states,
                chosen: s.chosen,
                old_log_prob: s.log_prob,
                reward: pending,
                critic_mean: s.critic_mean,
            });
            pending = 0.0;
        }
    }
    if let Some(s) = steps.next() {
        return Err(Error::contract(format!("policy step for invocation {} has no arrival in the episode", s.inv_id)));
    }
    pending += compute_reward(&result.tail_slowdowns, c);
    if let Some(last) = out.last_mut() {
        last.reward += pending;
    }
    Ok(Trajectory { steps: out })
}

pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for i in (0..rewards.len()).rev() {
        acc = rewards[i] + gamma * acc;
        out[i] = acc;
    }
    out
}

/// `return-to-go - critic mean` per step, with the critic means stored at
/// rollout time.
pub fn compute_advantages(traj: &Trajectory, gamma: f64) -> Vec<f64> {
    let returns = returns_to_go(&traj.rewards(), gamma);
    returns.iter().zip(&traj.steps).map(|(r, s)| r - s.critic_mean).collect()
}

pub fn clip_objective(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let g = if advantage >= 0.0 { (1.0 + epsilon) * advantage } else { (1.0 - epsilon) * advantage };
    (ratio * advantage).min(g)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// Negated mean clipped objective.
    pub actor_loss: f64,
    /// Mean squared error of the critic mean against the return-to-go.
    pub critic_loss: f64,
    /// Share of steps whose clipped branch was active.
    pub clip_fraction: f64,
}

/// Optimizer state for both networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub actor: AdamW,
    pub critic: AdamW,
}

impl Optimizers {
    pub fn new(policy: &Policy, lr: f64) -> Self {
        Optimizers {
            actor: AdamW::new(policy.actor.parameter_count(), lr),
            critic: AdamW::new(policy.critic.parameter_count(), lr),
        }
    }
}

/// Actor loss, critic loss and their parameter gradients at the current
/// parameters, for fixed advantages and returns.
pub fn surrogate_gradients(
    traj: &Trajectory,
    advantages: &[f64],
    returns: &[f64],
    policy: &Policy,
    epsilon: f64,
) -> Result<(EpochStats, Vec<f64>, Vec<f64>)> {
    if traj.is_empty() {
        return Err(Error::contract("PPO update on an empty trajectory"));
    }
    let t = traj.len() as f64;
    let mut actor_grad = vec![0.0; policy.actor.parameter_count()];
    let mut critic_grad = vec![0.0; policy.critic.parameter_count()];
    let mut objective = 0.0;
    let mut critic_loss = 0.0;
    let mut clipped = 0usize;
    for ((step, adv), ret) in traj.steps.iter().zip(advantages).zip(returns) {
        let actor_caches = caches(&policy.actor, &step.states)?;
        let scores: Vec<f64> = actor_caches.iter().map(|c| c.output()).collect();
        let ratio = (log_softmax_at(&scores, step.chosen) - step.old_log_prob).exp();
        let obj = clip_objective(ratio, *adv, epsilon);
        objective += obj;
        // the clipped branch is flat in theta; ties count as unclipped
        if ratio * adv <= obj {
            let probs = softmax(&scores);
            for (n, cache) in actor_caches.iter().enumerate() {
                let indicator = if n == step.chosen { 1.0 } else { 0.0 };
                // descend the negated objective
                let upstream = -adv * ratio * (indicator - probs[n]) / t;
                if upstream != 0.0 {
                    policy.actor.backward_into(cache, upstream, &mut actor_grad);
                }
            }
        } else {
            clipped += 1;
        }

        let critic_caches = caches(&policy.critic, &step.states)?;
        let n = critic_caches.len() as f64;
        let mean = critic_caches.iter().map(|c| c.output()).sum::<f64>() / n;
        critic_loss += (mean - ret).powi(2);
        let upstream = 2.0 * (mean - ret) / (n * t);
        for cache in &critic_caches {
            policy.critic.backward_into(cache, upstream, &mut critic_grad);
        }
    }
    let stats = EpochStats { actor_loss: -objective / t, critic_loss: critic_loss / t, clip_fraction: clipped as f64 / t };
    Ok((stats, actor_grad, critic_grad))
}

fn caches(net: &Mlp, states: &[StateVector]) -> Result<Vec<crate::neural::ForwardCache>> {
    states.iter().map(|s| net.forward_cached(s)).collect()
}

/// Full-batch PPO update: per epoch one gradient evaluation and one AdamW
/// step for each network. A network whose gradient is exactly zero is left
/// untouched, weight decay included.
pub fn ppo_update(traj: &Trajectory, policy: &mut Policy, opt: &mut Optimizers, cfg: &PpoConfig) -> Result<Vec<EpochStats>> {
    if traj.is_empty() {
        return Err(Error::contract("PPO update on an empty trajectory"));
    }
    let returns = returns_to_go(&traj.rewards(), cfg.gamma);
    let advantages: Vec<f64> = returns.iter().zip(&traj.steps).map(|(r, s)| r - s.critic_mean).collect();
    let mut stats = Vec::with_capacity(cfg.epochs_per_update);
    for _ in 0..cfg.epochs_per_update {
        let (s, ga, gc) = surrogate_gradients(traj, &advantages, &returns, policy, cfg.clip_epsilon)?;
        if ga.iter().any(|g| *g != 0.0) {
            opt.actor.step(policy.actor.params_mut(), &ga)?;
        }
        if gc.iter().any(|g| *g != 0.0) {
            opt.critic.step(policy.critic.params_mut(), &gc)?;
        }
        stats.push(s);
    }
    Ok(stats)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub cumulative_reward: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub avg_slowdown: f64,
    pub safe_invocation_rate: f64,
}

pub const TRAIN_LOG_HEADER: &str = "episode,cumulative_reward,actor_loss,critic_loss,avg_slowdown,safe_invocation_rate";

impl fmt::Display for EpisodeLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{}",
            self.episode, self.cumulative_reward, self.actor_loss, self.critic_loss, self.avg_slowdown, self.safe_invocation_rate
        )
    }
}

pub fn write_log<W: Write>(mut out: W, rows: &[EpisodeLog], header_comment: Option<&str>) -> std::io::Result<()> {
    if let Some(c) = header_comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "{TRAIN_LOG_HEADER}")?;
    for r in rows {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

/// Cluster config for training trace `idx`: each trace in the pool gets its
/// own saturation realizations, stable across the episodes that reuse it.
pub fn trace_cluster(cluster: &ClusterConfig, idx: usize) -> ClusterConfig {
    ClusterConfig { rng_seed: cluster.rng_seed.wrapping_add(idx as u64 * 7919), ..cluster.clone() }
}

fn episode_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(episode as u64 + 1)
}

/// Runs one sampled episode and returns the trajectory with the raw result.
pub fn rollout(policy: &Policy, trace: &Trace, cluster: &ClusterConfig, c: f64, seed: u64) -> Result<(Trajectory, EpisodeResult)> {
    let mut manager = FreyrManager::from_policy(policy.clone(), SelectionMode::Sample, seed).recording();
    let result = run(trace, &mut manager, cluster)?;
    let traj = build_trajectory(manager.take_steps(), &result, c)?;
    Ok((traj, result))
}

/// Trains `policy` in place for `cfg.episodes` episodes, cycling through
/// `traces`. `on_episode` sees every log row with the updated policy and may
/// persist checkpoints.
pub fn train(
    policy: &mut Policy,
    traces: &[Trace],
    cluster: &ClusterConfig,
    cfg: &PpoConfig,
    on_episode: &mut dyn FnMut(&EpisodeLog, &Policy) -> Result<()>,
) -> Result<Vec<EpisodeLog>> {
    cfg.validate()?;
    cluster.validate()?;
    if cfg.episodes > 0 && traces.is_empty() {
        return Err(Error::config("training needs at least one trace"));
    }
    let mut opt = Optimizers::new(policy, cfg.lr);
    let mut log = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let idx = episode % traces.len();
        let cl = trace_cluster(cluster, idx);
        let (traj, result) = rollout(policy, &traces[idx], &cl, cfg.reward_bonus, episode_seed(cfg.seed, episode))?;
        let (actor_loss, critic_loss) = if traj.is_empty() {
            (0.0, 0.0)
        } else {
            let stats = ppo_update(&traj, policy, &mut opt, cfg)?;
            (stats[0].actor_loss, stats[0].critic_loss)
        };
        let row = EpisodeLog {
            episode,
            cumulative_reward: episode_reward(&result, cfg.reward_bonus),
            actor_loss,
            critic_loss,
            avg_slowdown: avg_slowdown(&result.records)?,
            safe_invocation_rate: safe_invocation_rate(&result.records),
        };
        on_episode(&row, policy)?;
        log.push(row);
    }
    Ok(log)
}
