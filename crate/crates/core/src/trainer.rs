//! Double-DQN training with experience replay and task decomposition.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::episode::{argmax, make_state, mean_quality, EpisodeConfig, FrameIndex};
use crate::error::{Error, Result};
use crate::eval::run_episode;
use crate::hash::derive_seed;
use crate::policies::Policy;
use crate::qnet::{
    adam_step, batch_loss_and_grad, forward, forward_batch, save_params, AdamState, QNetConfig,
    QNetworkParams, Sample,
};
use crate::reward::{
    decompose, random_policy_stats_by_horizon, q_target, single_task, GoalVariant, RandomStats,
    StepRecord, Transition, DEFAULT_DELTA, DEFAULT_GAMMA, DEFAULT_RANDOM_RUNS,
};
use crate::sim::{Environment, ObservationMode, SimEnv};

const STREAM_INIT: u64 = 0x696e_6974;
const STREAM_STATS: u64 = 0x7374_6174;
const STREAM_ENV: u64 = 0x656e_7673;

/// Fixed-capacity FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }

    /// `k` entries drawn uniformly with replacement.
    pub fn sample<'a>(&'a self, k: usize, rng: &mut impl Rng) -> Vec<&'a Transition> {
        (0..k)
            .map(|_| &self.entries[rng.random_range(0..self.entries.len())])
            .collect()
    }
}

/// Which reward terms enter the targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardComponents {
    pub goal: bool,
    pub aux: bool,
}

impl Default for RewardComponents {
    fn default() -> Self {
        RewardComponents {
            goal: true,
            aux: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_steps: u64,
    pub target_sync_period: u64,
    pub t_train: u32,
    pub subseq_len: usize,
    pub episodes: usize,
    pub seed: u64,
    pub buffer_capacity: usize,
    /// Random-policy transitions collected before the first update; `None`
    /// means ten batches.
    pub warm_fill: Option<usize>,
    pub delta: f64,
    pub gamma: f64,
    pub random_runs: usize,
    pub goal_variant: GoalVariant,
    pub rewards: RewardComponents,
    pub decomposition: bool,
    /// The view the agent trains on.
    pub mode: ObservationMode,
    pub network: QNetConfig,
    /// Greedy evaluation on the first `eval_episodes` suite entries every
    /// `eval_every` episodes; `0` disables it.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub eval_horizon: u32,
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-6,
            batch_size: 32,
            eps_start: 0.7,
            eps_end: 0.25,
            eps_steps: 5000,
            target_sync_period: 200,
            t_train: 5,
            subseq_len: 25,
            episodes: 2000,
            seed: 0,
            buffer_capacity: 5760,
            warm_fill: None,
            delta: DEFAULT_DELTA,
            gamma: DEFAULT_GAMMA,
            random_runs: DEFAULT_RANDOM_RUNS,
            goal_variant: GoalVariant::Final,
            rewards: RewardComponents::default(),
            decomposition: true,
            mode: ObservationMode::Oracle,
            network: QNetConfig::default(),
            eval_every: 0,
            eval_episodes: 10,
            eval_horizon: 8,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    /// Settings sized for a single CPU and the surrogate suite. Windows are
    /// longer than the default so the agent sees the far-apart segments it
    /// meets on full-length episodes.
    pub fn desk() -> Self {
        TrainConfig {
            lr: 1e-4,
            episodes: 1000,
            subseq_len: 50,
            ..TrainConfig::default()
        }
    }

    pub fn warm_fill_target(&self) -> usize {
        self.warm_fill.unwrap_or(10 * self.batch_size)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.eps_end > 0.0 && self.eps_end <= self.eps_start && self.eps_start <= 1.0) {
            return bad(format!(
                "need 0 < eps_end <= eps_start <= 1, got {} and {}",
                self.eps_end, self.eps_start
            ));
        }
        if self.batch_size == 0
            || self.eps_steps == 0
            || self.target_sync_period == 0
            || self.t_train == 0
            || self.episodes == 0
            || self.buffer_capacity == 0
        {
            return bad("batch_size, eps_steps, target_sync_period, t_train, episodes and buffer_capacity must be positive".into());
        }
        if self.subseq_len < 2 {
            return bad(format!("subseq_len must be >= 2, got {}", self.subseq_len));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.random_runs < 2 {
            return bad(format!("random_runs must be >= 2, got {}", self.random_runs));
        }
        self.network.validate()
    }
}

/// `eps_start · (eps_end / eps_start)^(min(u, eps_steps) / eps_steps)`.
pub fn epsilon(step: u64, cfg: &TrainConfig) -> f64 {
    if step >= cfg.eps_steps {
        return cfg.eps_end;
    }
    let frac = step as f64 / cfg.eps_steps as f64;
    cfg.eps_start * (cfg.eps_end / cfg.eps_start).powf(frac)
}

/// Independent copy of the policy network.
pub fn sync_target(policy: &QNetworkParams) -> QNetworkParams {
    policy.clone()
}

/// Performance after `t` random steps on `config`, for `t = 1..=config.horizon`.
pub fn episode_stats(
    config: &EpisodeConfig,
    n_runs: usize,
    seed: u64,
) -> Result<BTreeMap<u32, RandomStats>> {
    random_policy_stats_by_horizon(
        |run| {
            let mut c = config.clone();
            c.seed = derive_seed(config.seed, &[STREAM_STATS, run as u64]);
            SimEnv::new(c)
        },
        config.horizon,
        n_runs,
        seed,
    )
}

/// Rolls out `config.horizon` ε-greedy steps and splits the rollout into
/// transitions.
#[allow(clippy::too_many_arguments)]
pub fn collect_episode<E: Environment>(
    env: &mut E,
    config: &EpisodeConfig,
    params: &QNetworkParams,
    eps: f64,
    stats_by_horizon: &BTreeMap<u32, RandomStats>,
    train: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Transition>> {
    let truth = env.reset(config)?;
    let n = truth.n_frames();
    let view = |env: &mut E, truth: &crate::episode::AgentState| -> Result<_> {
        match train.mode {
            ObservationMode::Oracle => Ok(truth.clone()),
            ObservationMode::Wild => make_state(
                env.observe(ObservationMode::Wild)?,
                truth.history.clone(),
                truth.round,
            ),
        }
    };
    let mut state = view(env, &truth)?;
    let mut rollout = Vec::with_capacity(config.horizon as usize);
    for _ in 0..config.horizon {
        let action = if eps >= 1.0 || rng.random::<f64>() < eps {
            rng.random_range(0..n)
        } else {
            argmax(&forward(params, &state)?).expect("non-empty")
        };
        let (next_truth, _) = env.step(FrameIndex(action))?;
        let next = view(env, &next_truth)?;
        rollout.push(StepRecord {
            state,
            action: FrameIndex(action),
            next_state: next.clone(),
            performance: mean_quality(&next_truth.quality)?,
        });
        state = next;
    }
    if train.decomposition {
        decompose(&rollout, stats_by_horizon, train.goal_variant)
    } else {
        single_task(&rollout, stats_by_horizon, train.goal_variant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub episode: usize,
    /// Environment steps since warm-fill, this episode included.
    pub steps: u64,
    /// Optimizer updates so far.
    pub updates: u64,
    pub epsilon: f64,
    pub mean_goal_reward: f64,
    pub mean_aux_reward: f64,
    pub mean_loss: f64,
    pub eval_auc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub warm_fill_transitions: usize,
    pub entries: Vec<LogEntry>,
}

impl TrainingLog {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// A training window: a random crop of a random suite episode with the
/// training horizon and a fresh transition-noise seed.
fn sample_window(
    suite: &[EpisodeConfig],
    cfg: &TrainConfig,
    tag: u64,
    rng: &mut impl Rng,
) -> Result<EpisodeConfig> {
    let base = &suite[rng.random_range(0..suite.len())];
    let mut c = if base.n_frames > cfg.subseq_len {
        let start = rng.random_range(0..=base.n_frames - cfg.subseq_len);
        base.crop(start, cfg.subseq_len)?
    } else {
        base.clone()
    };
    c.horizon = cfg.t_train;
    c.seed = derive_seed(base.seed, &[STREAM_ENV, tag]);
    Ok(c)
}

/// One double-Q minibatch update; returns the batch loss.
fn update(
    policy: &mut QNetworkParams,
    target: &QNetworkParams,
    adam: &mut AdamState,
    buffer: &ReplayBuffer,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    let batch = buffer.sample(cfg.batch_size, rng);
    let next: Vec<_> = batch
        .iter()
        .filter(|t| !t.terminal)
        .map(|t| &t.next_state)
        .collect();
    let q_policy = forward_batch(policy, &next)?;
    let q_target_net = forward_batch(target, &next)?;
    let mut next_values = q_policy
        .iter()
        .zip(&q_target_net)
        .map(|(p, t)| t[argmax(p).expect("non-empty")]);
    let mut samples = Vec::with_capacity(batch.len());
    for t in &batch {
        let bootstrap = if t.terminal {
            0.0
        } else {
            next_values.next().expect("one value per non-terminal item")
        };
        let masked = Transition {
            goal_reward: t.goal_reward.map(|g| if cfg.rewards.goal { g } else { 0.0 }),
            aux_reward: if cfg.rewards.aux { t.aux_reward } else { 0.0 },
            ..(*t).clone()
        };
        samples.push(Sample {
            state: &t.state,
            action: t.action,
            target: q_target(&masked, bootstrap, cfg.delta, cfg.gamma)?,
        });
    }
    let (loss, grads) = batch_loss_and_grad(policy, &samples)?;
    adam_step(policy, &grads, adam, cfg.lr)?;
    Ok(loss)
}

/// Greedy-agent mean AUC over the first `cfg.eval_episodes` suite entries.
pub fn evaluate_greedy(
    params: &QNetworkParams,
    suite: &[EpisodeConfig],
    cfg: &TrainConfig,
) -> Result<f64> {
    let k = cfg.eval_episodes.clamp(1, suite.len());
    let mut total = 0.0;
    for config in &suite[..k] {
        let mut c = config.clone();
        c.horizon = cfg.eval_horizon;
        let mut env = SimEnv::new(c.clone())?;
        let mut policy = Policy::agent(params.clone());
        total += run_episode(&mut env, &c, &mut policy, cfg.mode)?.auc;
    }
    Ok(total / k as f64)
}

/// Trains a Q-network on windows of `suite`. Single-threaded and fully
/// determined by `cfg.seed`.
pub fn train(cfg: &TrainConfig, suite: &[EpisodeConfig]) -> Result<(QNetworkParams, TrainingLog)> {
    train_with(cfg, suite, |_| {})
}

/// [`train`] with a callback invoked after every logged episode.
pub fn train_with(
    cfg: &TrainConfig,
    suite: &[EpisodeConfig],
    mut on_episode: impl FnMut(&LogEntry),
) -> Result<(QNetworkParams, TrainingLog)> {
    cfg.validate()?;
    if suite.is_empty() {
        return Err(Error::Config("training needs a non-empty suite".into()));
    }
    for c in suite {
        c.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_INIT]));
    let mut policy = QNetworkParams::init(cfg.network, &mut init_rng)?;
    let mut target = sync_target(&policy);
    let mut adam = AdamState::for_params(&policy);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    let mut log = TrainingLog::default();

    let mut window_tag = 0u64;
    let mut next_window = |rng: &mut ChaCha8Rng| -> Result<(EpisodeConfig, BTreeMap<u32, RandomStats>)> {
        window_tag += 1;
        let c = sample_window(suite, cfg, window_tag, rng)?;
        let stats = episode_stats(&c, cfg.random_runs, derive_seed(cfg.seed, &[STREAM_STATS, window_tag]))?;
        Ok((c, stats))
    };

    while buffer.len() < cfg.warm_fill_target() {
        let (c, stats) = next_window(&mut rng)?;
        let mut env = SimEnv::new(c.clone())?;
        for t in collect_episode(&mut env, &c, &policy, 1.0, &stats, cfg, &mut rng)? {
            buffer.push(t);
            log.warm_fill_transitions += 1;
        }
    }

    let mut steps = 0u64;
    let mut updates = 0u64;
    for episode in 0..cfg.episodes {
        let (c, stats) = next_window(&mut rng)?;
        let eps = epsilon(steps, cfg);
        let mut env = SimEnv::new(c.clone())?;
        let transitions = collect_episode(&mut env, &c, &policy, eps, &stats, cfg, &mut rng)?;
        let goals: Vec<f64> = transitions.iter().filter_map(|t| t.goal_reward).collect();
        let mean_goal_reward = goals.iter().sum::<f64>() / goals.len().max(1) as f64;
        let mean_aux_reward =
            transitions.iter().map(|t| t.aux_reward).sum::<f64>() / transitions.len() as f64;
        for t in transitions {
            buffer.push(t);
        }

        let mut loss = 0.0;
        for _ in 0..c.horizon {
            loss += update(&mut policy, &target, &mut adam, &buffer, cfg, &mut rng)?;
            updates += 1;
            if updates.is_multiple_of(cfg.target_sync_period) {
                target = sync_target(&policy);
            }
        }
        steps += u64::from(c.horizon);

        let eval_auc = if cfg.eval_every > 0 && (episode + 1) % cfg.eval_every == 0 {
            Some(evaluate_greedy(&policy, suite, cfg)?)
        } else {
            None
        };
        if let Some(dir) = &cfg.checkpoint_dir {
            if cfg.checkpoint_every > 0 && (episode + 1) % cfg.checkpoint_every == 0 {
                save_params(&policy, &dir.join(format!("checkpoint-{:06}.fpqn", episode + 1)))?;
            }
        }
        let entry = LogEntry {
            episode,
            steps,
            updates,
            epsilon: eps,
            mean_goal_reward,
            mean_aux_reward,
            mean_loss: loss / f64::from(c.horizon),
            eval_auc,
        };
        on_episode(&entry);
        log.entries.push(entry);
    }
    Ok((policy, log))
}
