//! Surrogate refinement environment.
//!
//! Stands in for a real interactive VOS backend as the state-transition
//! function. An annotation on frame `a` lifts every frame `n` by
//!
//! ```text
//! Δq_n = η · v_a · ρ^{c_a} · exp(-dist(n, a) / λ) · (1 - q_n)
//! ```
//!
//! where `c_a` counts earlier annotations of `a` (the initial frame
//! included) and `dist` adds `N · β` per segment boundary crossed.
//!
//! The history handed to agents counts recommendations only, so it always
//! sums to the round number; the initial annotation lives in the
//! environment's own annotation counts.

mod calibrate;
pub mod protocol;
pub mod suite;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use calibrate::{calibrate_noise, quality_population, CALIBRATION_SAMPLES};

use crate::episode::{
    argmax, make_state, AgentState, EpisodeConfig, FrameIndex, HistoryVector, QualityVector,
};
use crate::error::{Error, Result};
use crate::hash::derive_seed;

/// Quality of every frame right after the initial annotation, before
/// difficulty attenuation.
pub const BASE_QUALITY: f64 = 0.35;

/// Standard deviation of the per-step transition perturbation.
pub const TRANSITION_NOISE_STD: f64 = 0.005;

const STREAM_TRANSITION: u64 = 0x7472_616e;
const STREAM_OBSERVE: u64 = 0x6f62_7376;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationMode {
    /// The selector sees true quality.
    Oracle,
    /// The selector sees a noisy estimate.
    Wild,
}

impl std::str::FromStr for ObservationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "oracle" => Ok(ObservationMode::Oracle),
            "wild" => Ok(ObservationMode::Wild),
            other => Err(Error::Config(format!("unknown observation mode {other:?}"))),
        }
    }
}

/// Anything that can play the role of the refinement backend.
///
/// `reset` and `step` return the state with true quality; selectors should
/// go through `observe` to get the view matching their setting.
pub trait Environment {
    fn reset(&mut self, config: &EpisodeConfig) -> Result<AgentState>;
    fn step(&mut self, action: FrameIndex) -> Result<(AgentState, bool)>;
    fn observe(&mut self, mode: ObservationMode) -> Result<QualityVector>;
}

/// Segment-aware distance between two frames.
pub fn segment_distance(config: &EpisodeConfig, n: usize, a: usize) -> f64 {
    let (lo, hi) = if n < a { (n, a) } else { (a, n) };
    let gap = (hi - lo) as f64;
    let beta = config.cross_segment_attenuation;
    if beta == 0.0 {
        return gap;
    }
    let crossings = config
        .segment_boundaries
        .iter()
        .filter(|&&b| b > lo && b <= hi)
        .count();
    gap + config.n_frames as f64 * beta * crossings as f64
}

#[derive(Debug, Clone)]
pub struct SimEnv {
    config: EpisodeConfig,
    /// `kernel[a * N + n] = exp(-dist(n, a) / λ)`.
    kernel: Vec<f64>,
    true_quality: Vec<f64>,
    history: HistoryVector,
    annotations: Vec<u32>,
    initial_frame: usize,
    round: u32,
    rng: ChaCha8Rng,
}

impl SimEnv {
    pub fn new(config: EpisodeConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_frames;
        let lambda = config.propagation_scale;
        let mut kernel = vec![0.0; n * n];
        for a in 0..n {
            for i in 0..n {
                kernel[a * n + i] = (-segment_distance(&config, i, a) / lambda).exp();
            }
        }
        let initial_frame = argmax(&config.info_value).expect("n_frames >= 2");
        let true_quality = config
            .difficulty
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                (1.0 - d) * BASE_QUALITY + d * BASE_QUALITY * kernel[initial_frame * n + i]
            })
            .collect();
        let mut annotations = vec![0; n];
        annotations[initial_frame] = 1;
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_TRANSITION]));
        Ok(SimEnv {
            kernel,
            true_quality,
            history: HistoryVector::zeros(n),
            annotations,
            initial_frame,
            round: 0,
            rng,
            config,
        })
    }

    /// A fresh episode whose true quality starts at `quality` instead of the
    /// difficulty-derived initial values.
    pub fn with_true_quality(config: EpisodeConfig, quality: QualityVector) -> Result<Self> {
        let mut env = SimEnv::new(config)?;
        if quality.len() != env.n_frames() {
            return Err(Error::Dimension(format!(
                "quality has {} frames, episode has {}",
                quality.len(),
                env.n_frames()
            )));
        }
        env.true_quality = quality.into_inner();
        Ok(env)
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn n_frames(&self) -> usize {
        self.config.n_frames
    }

    pub fn horizon(&self) -> u32 {
        self.config.horizon
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn is_done(&self) -> bool {
        self.round >= self.config.horizon
    }

    pub fn initial_frame(&self) -> FrameIndex {
        FrameIndex(self.initial_frame)
    }

    pub fn history(&self) -> &HistoryVector {
        &self.history
    }

    pub fn true_quality(&self) -> &[f64] {
        &self.true_quality
    }

    pub fn true_mean_quality(&self) -> f64 {
        self.true_quality.iter().sum::<f64>() / self.true_quality.len() as f64
    }

    /// Current state with true quality.
    pub fn state(&self) -> AgentState {
        let q = QualityVector::new(self.true_quality.clone())
            .expect("true quality is kept inside [0, 1]");
        make_state(q, self.history.clone(), self.round).expect("history tracks rounds")
    }

    /// Expected (noise-free) mean-quality gain of annotating `action` now.
    pub fn expected_gain(&self, action: usize) -> f64 {
        let n = self.n_frames();
        let c = &self.config;
        let scale = c.env_gain
            * c.info_value[action]
            * c.novelty_decay.powi(self.annotations[action] as i32);
        let k = &self.kernel[action * n..(action + 1) * n];
        let total: f64 = k
            .iter()
            .zip(&self.true_quality)
            .map(|(k, q)| scale * k * (1.0 - q))
            .sum();
        total / n as f64
    }

    fn apply(&mut self, action: usize) {
        let n = self.n_frames();
        let c = &self.config;
        let scale = c.env_gain
            * c.info_value[action]
            * c.novelty_decay.powi(self.annotations[action] as i32);
        let noise = c.transition_noise;
        let normal = Normal::new(0.0, TRANSITION_NOISE_STD).expect("valid std");
        for i in 0..n {
            let q = self.true_quality[i];
            let delta = scale * self.kernel[action * n + i] * (1.0 - q);
            let xi = if noise { normal.sample(&mut self.rng) } else { 0.0 };
            self.true_quality[i] = (q + delta + xi).clamp(0.0, 1.0);
        }
    }

    /// Quality as seen in the given mode. Wild noise comes from a per-round
    /// substream, so repeated observations within a round agree.
    pub fn observe_quality(&self, mode: ObservationMode) -> QualityVector {
        let values = match mode {
            ObservationMode::Oracle => self.true_quality.clone(),
            ObservationMode::Wild => {
                let sigma = self.config.obs_noise_sigma;
                if sigma == 0.0 {
                    self.true_quality.clone()
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        self.config.seed,
                        &[STREAM_OBSERVE, u64::from(self.round)],
                    ));
                    let normal = Normal::new(0.0, sigma).expect("validated sigma");
                    self.true_quality
                        .iter()
                        .map(|q| (q + normal.sample(&mut rng)).clamp(0.0, 1.0))
                        .collect()
                }
            }
        };
        QualityVector::new(values).expect("clamped into [0, 1]")
    }
}

impl Environment for SimEnv {
    fn reset(&mut self, config: &EpisodeConfig) -> Result<AgentState> {
        *self = SimEnv::new(config.clone())?;
        Ok(self.state())
    }

    fn step(&mut self, action: FrameIndex) -> Result<(AgentState, bool)> {
        if self.is_done() {
            return Err(Error::State(format!(
                "episode finished after {} rounds",
                self.config.horizon
            )));
        }
        let a = FrameIndex::checked(action.0, self.n_frames())?.0;
        self.apply(a);
        self.annotations[a] += 1;
        self.history.record(FrameIndex(a))?;
        self.round += 1;
        Ok((self.state(), self.is_done()))
    }

    fn observe(&mut self, mode: ObservationMode) -> Result<QualityVector> {
        Ok(self.observe_quality(mode))
    }
}
