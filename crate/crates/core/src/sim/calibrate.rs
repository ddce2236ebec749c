use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Environment, SimEnv};
use crate::episode::{EpisodeConfig, FrameIndex};
use crate::error::{Error, Result};
use crate::hash::derive_seed;
use crate::stats::pearson;

/// Population size used for noise calibration.
pub const CALIBRATION_SAMPLES: usize = 100_000;

const STREAM_POPULATION: u64 = 0x706f_7075;
const STREAM_CAL_NOISE: u64 = 0x6361_6c6e;
const TOLERANCE: f64 = 0.02;

/// True per-frame qualities collected from uniform-random rollouts of
/// `config`, one sample per frame per visited state, truncated to `samples`.
pub fn quality_population(config: &EpisodeConfig, samples: usize, seed: u64) -> Result<Vec<f64>> {
    config.validate()?;
    let mut out = Vec::with_capacity(samples);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STREAM_POPULATION]));
    let mut run = 0u64;
    while out.len() < samples {
        let mut cfg = config.clone();
        cfg.seed = derive_seed(seed, &[STREAM_POPULATION, run]);
        let mut env = SimEnv::new(cfg)?;
        out.extend_from_slice(env.true_quality());
        while !env.is_done() {
            let a = rng.random_range(0..env.n_frames());
            env.step(FrameIndex(a))?;
            out.extend_from_slice(env.true_quality());
        }
        run += 1;
    }
    out.truncate(samples);
    Ok(out)
}

fn noisy_pcc(population: &[f64], unit_noise: &[f64], sigma: f64) -> Option<f64> {
    let noisy: Vec<f64> = population
        .iter()
        .zip(unit_noise)
        .map(|(q, z)| (q + sigma * z).clamp(0.0, 1.0))
        .collect();
    pearson(population, &noisy)
}

/// Finds the observation-noise level whose Pearson correlation with true
/// quality matches `target_pcc`, by bisection on `log σ` with common random
/// numbers.
pub fn calibrate_noise(target_pcc: f64, config: &EpisodeConfig) -> Result<f64> {
    if !(target_pcc > 0.0 && target_pcc < 1.0) {
        return Err(Error::Calibration(format!(
            "target PCC {target_pcc} outside (0, 1)"
        )));
    }
    let population = quality_population(config, CALIBRATION_SAMPLES, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_CAL_NOISE]));
    let unit: Vec<f64> = (0..population.len())
        .map(|_| rng.sample(StandardNormal))
        .collect();

    let pcc = |log_sigma: f64| noisy_pcc(&population, &unit, log_sigma.exp());
    let (mut lo, mut hi) = (1e-6f64.ln(), 1e2f64.ln());
    let p_lo = pcc(lo).ok_or_else(|| {
        Error::Calibration("quality population has no variance".into())
    })?;
    let p_hi = pcc(hi).unwrap_or(0.0);
    if p_lo < target_pcc || p_hi > target_pcc {
        return Err(Error::Calibration(format!(
            "target {target_pcc} not bracketed by [{p_hi:.4}, {p_lo:.4}]"
        )));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        match pcc(mid) {
            Some(p) if p > target_pcc => lo = mid,
            _ => hi = mid,
        }
    }
    let sigma = (0.5 * (lo + hi)).exp();
    let achieved = pcc(sigma.ln()).unwrap_or(0.0);
    if (achieved - target_pcc).abs() > TOLERANCE {
        return Err(Error::Calibration(format!(
            "best sigma {sigma:.5} reaches PCC {achieved:.4}, target {target_pcc}"
        )));
    }
    Ok(sigma)
}
