//! Frame-selection strategies behind one interface.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::episode::{argmax, argmin, make_state, FrameIndex, HistoryVector, QualityVector};
use crate::error::{Error, Result};
use crate::qnet::{forward, QNetworkParams};
use crate::sim::ObservationMode;

#[derive(Debug, Clone)]
pub enum Policy {
    /// Uniform over all frames.
    Random { seed: u64, rng: ChaCha8Rng },
    /// `T` evenly spaced picks, independent of the observation.
    Linspace,
    /// Lowest true quality.
    WorstOracle,
    /// Lowest estimated quality.
    WorstWild,
    /// Highest Q-value of a trained network.
    Agent(Option<Arc<QNetworkParams>>),
    /// Replays externally chosen frames, e.g. a person's picks.
    Scripted(VecDeque<usize>),
    /// Placeholder for a person choosing through an interactive session.
    Human,
}

impl Policy {
    pub fn random(seed: u64) -> Self {
        Policy::Random {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn agent(params: QNetworkParams) -> Self {
        Policy::Agent(Some(Arc::new(params)))
    }

    /// Parses a policy kind. `agent` yields an agent without parameters.
    pub fn from_name(name: &str, seed: u64) -> Result<Self> {
        match name {
            "random" => Ok(Policy::random(seed)),
            "linspace" => Ok(Policy::Linspace),
            "worst-oracle" | "worst" => Ok(Policy::WorstOracle),
            "worst-wild" => Ok(Policy::WorstWild),
            "agent" => Ok(Policy::Agent(None)),
            "human" => Ok(Policy::Human),
            other => Err(Error::Config(format!("unknown policy {other:?}"))),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Policy::Random { .. } => "random",
            Policy::Linspace => "linspace",
            Policy::WorstOracle => "worst-oracle",
            Policy::WorstWild => "worst-wild",
            Policy::Agent(_) => "agent",
            Policy::Scripted(_) => "scripted",
            Policy::Human => "human",
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, Policy::Random { .. })
    }

    /// Same policy with a fresh generator; deterministic policies are cloned.
    pub fn reseeded(&self, seed: u64) -> Self {
        match self {
            Policy::Random { .. } => Policy::random(seed),
            other => other.clone(),
        }
    }

    /// The view this policy selects from when the run uses `run_mode`.
    pub fn observation_mode(&self, run_mode: ObservationMode) -> ObservationMode {
        match self {
            Policy::WorstOracle => ObservationMode::Oracle,
            Policy::WorstWild => ObservationMode::Wild,
            _ => run_mode,
        }
    }

    pub fn select(
        &mut self,
        observation: &QualityVector,
        history: &HistoryVector,
        round: u32,
        horizon: u32,
    ) -> Result<FrameIndex> {
        let n = observation.len();
        if n == 0 || history.len() != n {
            return Err(Error::Dimension(format!(
                "observation has {n} frames, history {}",
                history.len()
            )));
        }
        match self {
            Policy::Random { rng, .. } => Ok(FrameIndex(rng.random_range(0..n))),
            Policy::Linspace => Ok(linspace_index(round, n, horizon)),
            Policy::WorstOracle | Policy::WorstWild => Ok(FrameIndex(
                argmin(observation.as_slice()).expect("non-empty"),
            )),
            Policy::Agent(None) => Err(Error::Config("agent policy has no parameters".into())),
            Policy::Agent(Some(params)) => {
                let state = make_state(observation.clone(), history.clone(), round)?;
                let q = forward(params, &state)?;
                Ok(FrameIndex(argmax(&q).expect("non-empty")))
            }
            Policy::Scripted(queue) => {
                let a = queue
                    .pop_front()
                    .ok_or_else(|| Error::State("scripted policy ran out of actions".into()))?;
                FrameIndex::checked(a, n)
            }
            Policy::Human => Err(Error::Config(
                "human selections arrive through an interactive session".into(),
            )),
        }
    }
}

/// `round_half_up((round + 1) · N / (T + 1))`, clamped to the frame range.
pub fn linspace_index(round: u32, n_frames: usize, horizon: u32) -> FrameIndex {
    let num = u64::from(round + 1) * n_frames as u64;
    let den = u64::from(horizon) + 1;
    let idx = (2 * num + den) / (2 * den);
    FrameIndex((idx as usize).min(n_frames.saturating_sub(1)))
}
