//! Benchmark suite generation and suite files.
//!
//! Difficulty and info-value fields have Beta(2, 2) marginals. They are
//! made temporally smooth and positively correlated with each other by
//! reordering iid Beta draws according to the ranks of latent AR(1)
//! Gaussian sequences: hard frames tend to be the informative ones.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::episode::EpisodeConfig;
use crate::error::{Error, Result};
use crate::hash::{derive_seed, fnv1a64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteParams {
    pub n_episodes: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    pub horizon: u32,
    pub n_objects: u32,
    pub propagation_scale: (f64, f64),
    pub env_gain: (f64, f64),
    pub novelty_decay: (f64, f64),
    pub cross_segment_attenuation: (f64, f64),
    /// Lag-one autocorrelation of the latent difficulty sequence.
    pub smoothness: f64,
    /// Latent correlation between difficulty and info value.
    pub difficulty_info_correlation: f64,
    pub obs_noise_sigma: f64,
    pub transition_noise: bool,
}

impl Default for SuiteParams {
    fn default() -> Self {
        SuiteParams {
            n_episodes: 50,
            min_frames: 25,
            max_frames: 100,
            min_segments: 1,
            max_segments: 4,
            horizon: 8,
            n_objects: 1,
            propagation_scale: (4.0, 12.0),
            env_gain: (0.5, 0.9),
            novelty_decay: (0.3, 0.7),
            cross_segment_attenuation: (0.2, 0.6),
            smoothness: 0.8,
            difficulty_info_correlation: 0.7,
            obs_noise_sigma: 0.15,
            transition_noise: true,
        }
    }
}

impl SuiteParams {
    fn validate(&self) -> Result<()> {
        if self.n_episodes == 0 {
            return Err(Error::Config("suite needs at least one episode".into()));
        }
        if self.min_frames < 2 || self.min_frames > self.max_frames {
            return Err(Error::Config(format!(
                "bad frame range [{}, {}]",
                self.min_frames, self.max_frames
            )));
        }
        if self.min_segments < 1
            || self.min_segments > self.max_segments
            || self.max_segments > self.min_frames
        {
            return Err(Error::Config(format!(
                "bad segment range [{}, {}]",
                self.min_segments, self.max_segments
            )));
        }
        if !(-1.0..=1.0).contains(&self.difficulty_info_correlation)
            || !(0.0..1.0).contains(&self.smoothness)
        {
            return Err(Error::Config("correlations must lie in [-1, 1]".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn ar1(rng: &mut impl Rng, n: usize, phi: f64) -> Vec<f64> {
    let innov = (1.0 - phi * phi).sqrt();
    let mut z = Vec::with_capacity(n);
    let mut prev: f64 = rng.sample(StandardNormal);
    z.push(prev);
    for _ in 1..n {
        let e: f64 = rng.sample(StandardNormal);
        prev = phi * prev + innov * e;
        z.push(prev);
    }
    z
}

/// Reorders `values` so their ranks follow the ranks of `latent`.
fn rank_reorder(mut values: Vec<f64>, latent: &[f64]) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let mut order: Vec<usize> = (0..latent.len()).collect();
    order.sort_by(|&a, &b| latent[a].total_cmp(&latent[b]));
    let mut out = vec![0.0; values.len()];
    for (rank, &pos) in order.iter().enumerate() {
        out[pos] = values[rank];
    }
    out
}

pub fn generate_episode(params: &SuiteParams, seed: u64) -> Result<EpisodeConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(params.min_frames..=params.max_frames);
    let n_segments = rng.random_range(params.min_segments..=params.max_segments);
    let mut segment_boundaries: Vec<usize> = sample(&mut rng, n - 1, n_segments - 1)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    segment_boundaries.sort_unstable();

    let beta = Beta::new(2.0, 2.0).expect("valid beta");
    let draws = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| beta.sample(rng)).collect() };
    let latent_d = ar1(&mut rng, n, params.smoothness);
    let own_v = ar1(&mut rng, n, params.smoothness);
    let c = params.difficulty_info_correlation;
    let latent_v: Vec<f64> = latent_d
        .iter()
        .zip(&own_v)
        .map(|(d, v)| c * d + (1.0 - c * c).sqrt() * v)
        .collect();
    let difficulty = rank_reorder(draws(&mut rng), &latent_d);
    let info_value = rank_reorder(draws(&mut rng), &latent_v)
        .into_iter()
        .map(|v| v.clamp(1e-6, 1.0))
        .collect();

    let config = EpisodeConfig {
        n_frames: n,
        horizon: params.horizon,
        n_objects: params.n_objects,
        segment_boundaries,
        difficulty,
        info_value,
        propagation_scale: uniform(&mut rng, params.propagation_scale),
        env_gain: uniform(&mut rng, params.env_gain),
        novelty_decay: uniform(&mut rng, params.novelty_decay),
        cross_segment_attenuation: uniform(&mut rng, params.cross_segment_attenuation),
        obs_noise_sigma: params.obs_noise_sigma,
        seed: derive_seed(seed, &[0x0065_6e76]),
        transition_noise: params.transition_noise,
    };
    config.validate()?;
    Ok(config)
}

pub fn generate_suite(params: &SuiteParams, seed: u64) -> Result<Vec<EpisodeConfig>> {
    params.validate()?;
    (0..params.n_episodes)
        .map(|i| generate_episode(params, derive_seed(seed, &[i as u64])))
        .collect()
}

pub fn suite_to_string(suite: &[EpisodeConfig]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(suite)?;
    s.push('\n');
    Ok(s)
}

/// 64-bit content hash of a suite file's bytes.
pub fn suite_hash(bytes: &[u8]) -> u64 {
    fnv1a64(bytes)
}

pub fn write_suite(path: &Path, suite: &[EpisodeConfig]) -> Result<u64> {
    let text = suite_to_string(suite)?;
    std::fs::write(path, &text).map_err(|e| Error::io(path, e))?;
    Ok(suite_hash(text.as_bytes()))
}

/// Loads and validates a suite, returning it with its content hash.
pub fn load_suite(path: &Path) -> Result<(Vec<EpisodeConfig>, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let suite: Vec<EpisodeConfig> = serde_json::from_slice(&bytes)?;
    if suite.is_empty() {
        return Err(Error::Config(format!("{} holds no episodes", path.display())));
    }
    for (i, c) in suite.iter().enumerate() {
        c.validate()
            .map_err(|e| Error::Config(format!("episode {i}: {e}")))?;
    }
    Ok((suite, suite_hash(&bytes)))
}
