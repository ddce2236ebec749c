//! Rewards, random-policy statistics and action-value targets.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::episode::{AgentState, FrameIndex, HistoryVector};
use crate::error::{Error, Result};
use crate::hash::derive_seed;
use crate::sim::{Environment, ObservationMode};

/// Lower bound on the random-policy standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-3;
/// Reward scaling factor δ.
pub const DEFAULT_DELTA: f64 = 0.1;
/// Discount factor γ.
pub const DEFAULT_GAMMA: f64 = 0.95;
/// Random rollouts per episode used to estimate μ̂ and σ̂.
pub const DEFAULT_RANDOM_RUNS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomStats {
    pub horizon: u32,
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub n_runs: usize,
}

impl RandomStats {
    /// Sample mean and floored unbiased standard deviation of `samples`.
    pub fn from_samples(horizon: u32, samples: &[f64]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 random runs, got {}",
                samples.len()
            )));
        }
        let mu_hat = crate::stats::mean(samples).expect("non-empty");
        let sigma_hat = crate::stats::sample_std(samples)
            .expect("two or more samples")
            .max(SIGMA_FLOOR);
        Ok(RandomStats {
            horizon,
            mu_hat,
            sigma_hat,
            n_runs: samples.len(),
        })
    }
}

/// Final performance of `n_runs` uniform-random rollouts of length `horizon`,
/// each on a fresh environment from `env_factory(run_index)`.
pub fn random_policy_stats<E, F>(
    mut env_factory: F,
    horizon: u32,
    n_runs: usize,
    seed: u64,
) -> Result<RandomStats>
where
    E: Environment,
    F: FnMut(usize) -> Result<E>,
{
    if horizon < 1 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    if n_runs < 2 {
        return Err(Error::Config(format!("n_runs must be >= 2, got {n_runs}")));
    }
    let mut finals = Vec::with_capacity(n_runs);
    for run in 0..n_runs {
        let mut env = env_factory(run)?;
        let n = env.observe(ObservationMode::Oracle)?.len();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::from(horizon), run as u64]));
        for _ in 0..horizon {
            env.step(FrameIndex(rng.random_range(0..n)))?;
        }
        finals.push(crate::episode::mean_quality(&env.observe(ObservationMode::Oracle)?)?);
    }
    RandomStats::from_samples(horizon, &finals)
}

/// Random-policy statistics for every horizon `1..=max_horizon`, taking the
/// performance after step `t` of each rollout as the horizon-`t` sample.
pub fn random_policy_stats_by_horizon<E, F>(
    mut env_factory: F,
    max_horizon: u32,
    n_runs: usize,
    seed: u64,
) -> Result<BTreeMap<u32, RandomStats>>
where
    E: Environment,
    F: FnMut(usize) -> Result<E>,
{
    if max_horizon < 1 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    if n_runs < 2 {
        return Err(Error::Config(format!("n_runs must be >= 2, got {n_runs}")));
    }
    let mut samples = vec![Vec::with_capacity(n_runs); max_horizon as usize];
    for run in 0..n_runs {
        let mut env = env_factory(run)?;
        let n = env.observe(ObservationMode::Oracle)?.len();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[run as u64]));
        for per_t in samples.iter_mut() {
            let (state, _) = env.step(FrameIndex(rng.random_range(0..n)))?;
            per_t.push(crate::episode::mean_quality(&state.quality)?);
        }
    }
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let t = i as u32 + 1;
            Ok((t, RandomStats::from_samples(t, s)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalVariant {
    /// Positive once `P` beats the random-policy mean.
    Naive,
    /// Positive only once `P` beats the random mean by one standard deviation.
    #[default]
    Final,
}

pub fn goal_reward(performance: f64, stats: &RandomStats, variant: GoalVariant) -> f64 {
    match variant {
        GoalVariant::Naive => (performance - stats.mu_hat) / stats.sigma_hat,
        GoalVariant::Final => (performance - (stats.mu_hat + stats.sigma_hat)) / stats.sigma_hat,
    }
}

/// `+1` when `action` is among the least-recommended frames, `-1` otherwise.
pub fn aux_reward(history: &HistoryVector, action: FrameIndex) -> f64 {
    match (history.as_slice().get(action.0), history.min_count()) {
        (Some(&c), Some(min)) if c == min => 1.0,
        _ => -1.0,
    }
}

/// One replay-buffer record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: AgentState,
    pub action: FrameIndex,
    pub next_state: AgentState,
    pub terminal: bool,
    pub horizon: u32,
    pub goal_reward: Option<f64>,
    pub aux_reward: f64,
}

/// Action-value target: `δ·r_goal` for terminal transitions, otherwise
/// `δ·r_aux + γ·Q_target(s', argmax_a Q_policy(s', a))`.
pub fn q_target(tr: &Transition, target_q_next: f64, delta: f64, gamma: f64) -> Result<f64> {
    if tr.terminal {
        let goal = tr.goal_reward.ok_or_else(|| {
            Error::Consistency("terminal transition without goal reward".into())
        })?;
        Ok(delta * goal)
    } else {
        Ok(delta * tr.aux_reward + gamma * target_q_next)
    }
}

/// One executed step of a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub state: AgentState,
    pub action: FrameIndex,
    pub next_state: AgentState,
    /// Mean true quality after the step.
    pub performance: f64,
}

fn stats_for(stats: &BTreeMap<u32, RandomStats>, horizon: u32) -> Result<&RandomStats> {
    stats
        .get(&horizon)
        .ok_or_else(|| Error::Config(format!("no random-policy stats for horizon {horizon}")))
}

/// Splits a `T`-step rollout into `T` sub-tasks: each step `t` ends a
/// sub-task of horizon `t` (a terminal transition scored against the
/// horizon-`t` random stats) and, for `t < T`, also continues the longer ones
/// (a non-terminal transition carrying the auxiliary reward).
pub fn decompose(
    rollout: &[StepRecord],
    stats_by_horizon: &BTreeMap<u32, RandomStats>,
    variant: GoalVariant,
) -> Result<Vec<Transition>> {
    let total = rollout.len() as u32;
    let mut out = Vec::with_capacity(2 * rollout.len());
    for (i, step) in rollout.iter().enumerate() {
        let t = i as u32 + 1;
        let stats = stats_for(stats_by_horizon, t)?;
        let aux = aux_reward(&step.state.history, step.action);
        out.push(Transition {
            state: step.state.clone(),
            action: step.action,
            next_state: step.next_state.clone(),
            terminal: true,
            horizon: t,
            goal_reward: Some(goal_reward(step.performance, stats, variant)),
            aux_reward: aux,
        });
        if t < total {
            out.push(Transition {
                state: step.state.clone(),
                action: step.action,
                next_state: step.next_state.clone(),
                terminal: false,
                horizon: total,
                goal_reward: None,
                aux_reward: aux,
            });
        }
    }
    Ok(out)
}

/// The undecomposed task: one terminal transition at `T`, all earlier steps
/// non-terminal with zero intermediate goal reward.
pub fn single_task(
    rollout: &[StepRecord],
    stats_by_horizon: &BTreeMap<u32, RandomStats>,
    variant: GoalVariant,
) -> Result<Vec<Transition>> {
    let total = rollout.len() as u32;
    rollout
        .iter()
        .enumerate()
        .map(|(i, step)| {
            let t = i as u32 + 1;
            let terminal = t == total;
            let goal_reward = if terminal {
                Some(goal_reward(
                    step.performance,
                    stats_for(stats_by_horizon, t)?,
                    variant,
                ))
            } else {
                None
            };
            Ok(Transition {
                state: step.state.clone(),
                action: step.action,
                next_state: step.next_state.clone(),
                terminal,
                horizon: total,
                goal_reward,
                aux_reward: aux_reward(&step.state.history, step.action),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CachedStats {
    pub horizon: u32,
    pub n_runs: usize,
    pub seed: u64,
    pub mu_hat: f64,
    pub sigma_hat: f64,
}

/// On-disk random-stats cache: config hash (hex) to per-horizon entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StatsCache {
    entries: HashMap<String, Vec<CachedStats>>,
}

impl StatsCache {
    pub fn key(config_hash: u64) -> String {
        format!("{config_hash:016x}")
    }

    pub fn get(&self, config_hash: u64, horizon: u32, n_runs: usize, seed: u64) -> Option<RandomStats> {
        self.entries
            .get(&Self::key(config_hash))?
            .iter()
            .find(|e| e.horizon == horizon && e.n_runs == n_runs && e.seed == seed)
            .map(|e| RandomStats {
                horizon,
                mu_hat: e.mu_hat,
                sigma_hat: e.sigma_hat,
                n_runs,
            })
    }

    pub fn insert(&mut self, config_hash: u64, seed: u64, stats: RandomStats) {
        let list = self.entries.entry(Self::key(config_hash)).or_default();
        list.retain(|e| !(e.horizon == stats.horizon && e.n_runs == stats.n_runs && e.seed == seed));
        list.push(CachedStats {
            horizon: stats.horizon,
            n_runs: stats.n_runs,
            seed,
            mu_hat: stats.mu_hat,
            sigma_hat: stats.sigma_hat,
        });
        list.sort_by_key(|e| (e.horizon, e.n_runs, e.seed));
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // sorted keys keep the file stable across runs
        let sorted: BTreeMap<&String, &Vec<CachedStats>> = self.entries.iter().collect();
        let text = serde_json::to_string_pretty(&sorted)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
