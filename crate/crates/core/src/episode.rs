//! Domain types shared by the simulator, trainer, policies and harness.
//!
//! Frame indices are zero-based everywhere; reports add one only when
//! rendering for people.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::fnv1a64;

/// Zero-based index of a frame within an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrameIndex(pub usize);

impl FrameIndex {
    pub fn checked(index: usize, n_frames: usize) -> Result<Self> {
        if index < n_frames {
            Ok(FrameIndex(index))
        } else {
            Err(Error::Index { index, n_frames })
        }
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl fmt::Display for FrameIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // one-based for display
        write!(f, "frame {}", self.0 + 1)
    }
}

/// Per-frame segmentation quality, every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QualityVector(Vec<f64>);

impl QualityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Domain(format!(
                "quality[{i}] = {v} outside [0, 1]"
            )));
        }
        Ok(QualityVector(values))
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for QualityVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<QualityVector> for Vec<f64> {
    fn from(q: QualityVector) -> Self {
        q.0
    }
}

/// How many times each frame has been recommended so far.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HistoryVector(Vec<u32>);

impl HistoryVector {
    pub fn zeros(n: usize) -> Self {
        HistoryVector(vec![0; n])
    }

    pub fn from_counts(counts: Vec<u32>) -> Self {
        HistoryVector(counts)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn min_count(&self) -> Option<u32> {
        self.0.iter().copied().min()
    }

    pub fn record(&mut self, action: FrameIndex) -> Result<()> {
        let n = self.0.len();
        let slot = self.0.get_mut(action.0).ok_or(Error::Index {
            index: action.0,
            n_frames: n,
        })?;
        *slot += 1;
        Ok(())
    }
}

/// The agent's view of an episode: quality concatenated with history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub quality: QualityVector,
    pub history: HistoryVector,
    pub round: u32,
}

impl AgentState {
    pub fn n_frames(&self) -> usize {
        self.quality.len()
    }

    /// `[q_1..q_N, h_1..h_N]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.quality
            .as_slice()
            .iter()
            .copied()
            .chain(self.history.as_slice().iter().map(|&c| f64::from(c)))
            .collect()
    }
}

pub fn make_state(quality: QualityVector, history: HistoryVector, round: u32) -> Result<AgentState> {
    if quality.len() != history.len() {
        return Err(Error::Dimension(format!(
            "quality has {} frames, history has {}",
            quality.len(),
            history.len()
        )));
    }
    if history.total() != u64::from(round) {
        return Err(Error::Consistency(format!(
            "history sums to {} at round {round}",
            history.total()
        )));
    }
    Ok(AgentState {
        quality,
        history,
        round,
    })
}

/// Mean of per-object qualities within one frame.
pub fn aggregate_object_quality(per_object: &[f64]) -> Result<f64> {
    if per_object.is_empty() {
        return Err(Error::Domain("no objects to aggregate".into()));
    }
    if let Some(v) = per_object.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("object quality {v} outside [0, 1]")));
    }
    Ok(per_object.iter().sum::<f64>() / per_object.len() as f64)
}

/// Per-round performance: the mean of per-frame quality.
pub fn mean_quality(q: &QualityVector) -> Result<f64> {
    if q.is_empty() {
        return Err(Error::Domain("empty quality vector".into()));
    }
    Ok(q.as_slice().iter().sum::<f64>() / q.len() as f64)
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Lowest index among the minima.
pub fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v >= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

fn default_true() -> bool {
    true
}

/// Parameters of one surrogate episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub n_frames: usize,
    pub horizon: u32,
    pub n_objects: u32,
    /// Frame indices where a new segment starts. `0` may be listed but never
    /// counts as a crossing.
    pub segment_boundaries: Vec<usize>,
    pub difficulty: Vec<f64>,
    pub info_value: Vec<f64>,
    pub propagation_scale: f64,
    pub env_gain: f64,
    pub novelty_decay: f64,
    pub cross_segment_attenuation: f64,
    pub obs_noise_sigma: f64,
    pub seed: u64,
    /// Per-step Normal(0, 0.005²) perturbation of the true quality.
    #[serde(default = "default_true")]
    pub transition_noise: bool,
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_frames;
        let bad = |msg: String| Err(Error::Config(msg));
        if n < 2 {
            return bad(format!("n_frames must be >= 2, got {n}"));
        }
        if self.horizon < 1 {
            return bad("horizon must be >= 1".into());
        }
        if self.n_objects < 1 {
            return bad("n_objects must be >= 1".into());
        }
        if self.difficulty.len() != n || self.info_value.len() != n {
            return bad(format!(
                "difficulty/info_value lengths {}/{} do not match n_frames {n}",
                self.difficulty.len(),
                self.info_value.len()
            ));
        }
        if self.segment_boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return bad("segment boundaries must be strictly increasing".into());
        }
        if self.segment_boundaries.last().is_some_and(|&b| b >= n) {
            return bad("segment boundaries must be < n_frames".into());
        }
        if let Some(d) = self.difficulty.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return bad(format!("difficulty {d} outside [0, 1]"));
        }
        if let Some(v) = self.info_value.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return bad(format!("info value {v} outside (0, 1]"));
        }
        if !(self.propagation_scale > 0.0 && self.propagation_scale.is_finite()) {
            return bad(format!(
                "propagation_scale must be positive, got {}",
                self.propagation_scale
            ));
        }
        if !(0.0..=1.0).contains(&self.env_gain) {
            return bad(format!("env_gain {} outside [0, 1]", self.env_gain));
        }
        if !(self.novelty_decay > 0.0 && self.novelty_decay <= 1.0) {
            return bad(format!("novelty_decay {} outside (0, 1]", self.novelty_decay));
        }
        if !(0.0..=1.0).contains(&self.cross_segment_attenuation) {
            return bad(format!(
                "cross_segment_attenuation {} outside [0, 1]",
                self.cross_segment_attenuation
            ));
        }
        if !(self.obs_noise_sigma >= 0.0 && self.obs_noise_sigma.is_finite()) {
            return bad(format!("obs_noise_sigma {} must be >= 0", self.obs_noise_sigma));
        }
        Ok(())
    }

    /// Content hash of the canonical serialization.
    pub fn content_hash(&self) -> u64 {
        let bytes = serde_json::to_vec(self).expect("episode config serializes");
        fnv1a64(&bytes)
    }

    /// A window of `len` consecutive frames starting at `start`.
    pub fn crop(&self, start: usize, len: usize) -> Result<EpisodeConfig> {
        if len < 2 || start + len > self.n_frames {
            return Err(Error::Config(format!(
                "cannot crop [{start}, {}) from {} frames",
                start + len,
                self.n_frames
            )));
        }
        let end = start + len;
        Ok(EpisodeConfig {
            n_frames: len,
            segment_boundaries: self
                .segment_boundaries
                .iter()
                .filter(|&&b| b > start && b < end)
                .map(|&b| b - start)
                .collect(),
            difficulty: self.difficulty[start..end].to_vec(),
            info_value: self.info_value[start..end].to_vec(),
            ..self.clone()
        })
    }
}

/// One interaction round as seen by the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub action: FrameIndex,
    pub mean_quality_before: f64,
    pub mean_quality_after: f64,
    pub goal_reward: Option<f64>,
    pub aux_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub actions: Vec<FrameIndex>,
    pub scores: Vec<f64>,
    pub auc: f64,
}

impl EpisodeResult {
    pub fn from_rounds(actions: Vec<FrameIndex>, scores: Vec<f64>) -> Result<Self> {
        if actions.len() != scores.len() {
            return Err(Error::Dimension(format!(
                "{} actions but {} scores",
                actions.len(),
                scores.len()
            )));
        }
        let auc = crate::eval::auc(&scores)?;
        Ok(EpisodeResult {
            actions,
            scores,
            auc,
        })
    }
}
