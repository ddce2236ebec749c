#![allow(dead_code)]

use framepick::episode::{EpisodeConfig, FrameIndex, QualityVector};
use framepick::sim::{segment_distance, Environment, ObservationMode, SimEnv};

#[allow(clippy::too_many_arguments)]
pub fn config(
    difficulty: Vec<f64>,
    info_value: Vec<f64>,
    boundaries: Vec<usize>,
    lambda: f64,
    eta: f64,
    rho: f64,
    beta: f64,
    seed: u64,
) -> EpisodeConfig {
    EpisodeConfig {
        n_frames: difficulty.len(),
        horizon: 8,
        n_objects: 1,
        segment_boundaries: boundaries,
        difficulty,
        info_value,
        propagation_scale: lambda,
        env_gain: eta,
        novelty_decay: rho,
        cross_segment_attenuation: beta,
        obs_noise_sigma: 0.0,
        seed,
        transition_noise: false,
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// No frame loses quality along `actions` when transition noise is off.
pub fn check_monotone(config: &EpisodeConfig, actions: &[usize]) -> Result<(), String> {
    let mut c = config.clone();
    c.transition_noise = false;
    c.horizon = actions.len() as u32;
    let mut env = SimEnv::new(c).map_err(|e| e.to_string())?;
    for &a in actions {
        let before = env.true_quality().to_vec();
        env.step(FrameIndex(a)).map_err(|e| e.to_string())?;
        for (i, (q1, q0)) in env.true_quality().iter().zip(&before).enumerate() {
            if q1 < q0 {
                return Err(format!("frame {i} dropped from {q0} to {q1} after action {a}"));
            }
        }
    }
    Ok(())
}

/// Annotating `a` twice in a row gains strictly less the second time.
pub fn check_diminishing(config: &EpisodeConfig, a: usize) -> Result<(), String> {
    let mut c = config.clone();
    c.transition_noise = false;
    let mut env = SimEnv::new(c).map_err(|e| e.to_string())?;
    let m0 = env.true_mean_quality();
    env.step(FrameIndex(a)).map_err(|e| e.to_string())?;
    let m1 = env.true_mean_quality();
    env.step(FrameIndex(a)).map_err(|e| e.to_string())?;
    let m2 = env.true_mean_quality();
    if m2 - m1 < m1 - m0 {
        Ok(())
    } else {
        Err(format!("gains {} then {}", m1 - m0, m2 - m1))
    }
}

/// Frames at quality 1 stay there.
pub fn check_saturation(config: &EpisodeConfig, saturated: &[bool], a: usize) -> Result<(), String> {
    let mut c = config.clone();
    c.transition_noise = false;
    let q: Vec<f64> = saturated.iter().map(|&s| if s { 1.0 } else { 0.3 }).collect();
    let q = QualityVector::new(q).map_err(|e| e.to_string())?;
    let mut env = SimEnv::with_true_quality(c, q).map_err(|e| e.to_string())?;
    env.step(FrameIndex(a)).map_err(|e| e.to_string())?;
    for (i, &s) in saturated.iter().enumerate() {
        if s && env.true_quality()[i] != 1.0 {
            return Err(format!("saturated frame {i} moved to {}", env.true_quality()[i]));
        }
    }
    Ok(())
}

/// Every cross-segment frame gains no more than any same-segment frame at
/// the same raw distance from the annotated frame, given equal quality.
pub fn check_segment_attenuation(config: &EpisodeConfig, a: usize) -> Result<(), String> {
    let mut c = config.clone();
    c.transition_noise = false;
    let n = c.n_frames;
    let q = QualityVector::constant(n, 0.3).map_err(|e| e.to_string())?;
    let mut env = SimEnv::with_true_quality(c.clone(), q).map_err(|e| e.to_string())?;
    env.step(FrameIndex(a)).map_err(|e| e.to_string())?;
    let gain: Vec<f64> = env.true_quality().iter().map(|q| q - 0.3).collect();
    let raw = |i: usize| i.abs_diff(a) as f64;
    let crosses = |i: usize| segment_distance(&c, i, a) > raw(i);
    for i in 0..n {
        for j in 0..n {
            if raw(i) == raw(j) && crosses(i) && !crosses(j) && gain[i] > gain[j] + 1e-15 {
                return Err(format!(
                    "cross-segment frame {i} gained {} > same-segment frame {j} gained {}",
                    gain[i], gain[j]
                ));
            }
        }
    }
    Ok(())
}

/// With a vanishing propagation scale only the annotated frame changes.
pub fn check_localization(config: &EpisodeConfig, a: usize) -> Result<(), String> {
    let mut c = config.clone();
    c.transition_noise = false;
    c.propagation_scale = 1e-9;
    let mut env = SimEnv::new(c).map_err(|e| e.to_string())?;
    let before = env.true_quality().to_vec();
    env.step(FrameIndex(a)).map_err(|e| e.to_string())?;
    for (i, (q1, q0)) in env.true_quality().iter().zip(&before).enumerate() {
        if i != a && q1 != q0 {
            return Err(format!("frame {i} changed from {q0} to {q1}"));
        }
    }
    Ok(())
}

/// Two environments with equal seeds agree bit for bit, noise included.
pub fn check_determinism(config: &EpisodeConfig, actions: &[usize]) -> Result<(), String> {
    let mut c = config.clone();
    c.transition_noise = true;
    c.obs_noise_sigma = 0.1;
    c.horizon = actions.len() as u32;
    let run = || -> Result<Vec<Vec<f64>>, String> {
        let mut env = SimEnv::new(c.clone()).map_err(|e| e.to_string())?;
        let mut trace = vec![env.reset(&c).map_err(|e| e.to_string())?.quality.into_inner()];
        for &a in actions {
            let (s, _) = env.step(FrameIndex(a)).map_err(|e| e.to_string())?;
            trace.push(s.quality.into_inner());
            trace.push(
                env.observe(ObservationMode::Wild)
                    .map_err(|e| e.to_string())?
                    .into_inner(),
            );
        }
        Ok(trace)
    };
    let (x, y) = (run()?, run()?);
    let bits = |t: &Vec<Vec<f64>>| -> Vec<u64> { t.iter().flatten().map(|v| v.to_bits()).collect() };
    if bits(&x) == bits(&y) {
        Ok(())
    } else {
        Err("runs diverged".into())
    }
}
