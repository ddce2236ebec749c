use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{forward, loss_and_grad, QNetConfig, QNetworkParams};
use crate::episode::{make_state, AgentState, FrameIndex, HistoryVector, QualityVector};
use crate::error::Result;

/// Central-difference step used by default.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for relative errors, so parameters whose true gradient
/// is zero do not turn rounding noise into a large ratio.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR)
}

/// Coordinates sampled per draw when a survey checks a full-size network.
pub const SURVEY_COORDS: usize = 300;

#[derive(Debug, Clone, Serialize)]
pub struct GradSurvey {
    pub draws: usize,
    pub checked: usize,
    pub max_rel_err: f64,
}

fn random_state(rng: &mut impl Rng, n: usize) -> Result<AgentState> {
    let q: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let h: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let round = h.iter().sum();
    make_state(QualityVector::new(q)?, HistoryVector::from_counts(h), round)
}

/// Gradient checks on `draws` random networks, states, actions and targets.
/// Every tenth draw is a default-size network checked on a sample of
/// coordinates; the others are small networks checked on every parameter.
pub fn gradient_survey(draws: usize, seed: u64) -> Result<GradSurvey> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut survey = GradSurvey {
        draws,
        checked: 0,
        max_rel_err: 0.0,
    };
    for draw in 0..draws {
        let full_size = draw % 10 == 0;
        let config = if full_size {
            QNetConfig::default()
        } else {
            QNetConfig {
                embed: rng.random_range(1..6),
                hidden: rng.random_range(1..8),
                head: rng.random_range(1..8),
                ..QNetConfig::default()
            }
        };
        let mut params = QNetworkParams::init(config, &mut rng)?;
        for v in params.values_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        let n = rng.random_range(1..12);
        let state = random_state(&mut rng, n)?;
        let action = FrameIndex(rng.random_range(0..n));
        let target = rng.random_range(-1.0..1.0);
        let coords = full_size.then(|| sample(&mut rng, params.len(), SURVEY_COORDS).into_vec());
        let r = gradient_check(&params, &state, action, target, FD_STEP, coords.as_deref())?;
        survey.max_rel_err = survey.max_rel_err.max(r.max_rel_err);
        survey.checked += r.checked;
    }
    Ok(survey)
}

/// Compares analytic gradients with central differences on `coords`
/// (every parameter when `None`).
pub fn gradient_check(
    params: &QNetworkParams,
    state: &AgentState,
    action: FrameIndex,
    target: f64,
    step: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheck> {
    let (_, grads) = loss_and_grad(params, state, action, target)?;
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut probe = params.clone();
    let mut report = GradCheck {
        checked: 0,
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let loss_at = |p: &QNetworkParams| -> Result<f64> {
        let e = forward(p, state)?[action.0] - target;
        Ok(e * e)
    };
    for &i in coords {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + step;
        let up = loss_at(&probe)?;
        probe.values_mut()[i] = orig - step;
        let down = loss_at(&probe)?;
        probe.values_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let analytic = grads.values()[i];
        let err = relative_error(analytic, numeric);
        if err > report.max_rel_err || report.checked == 0 {
            report.max_rel_err = err;
            report.worst_index = i;
            report.analytic = analytic;
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}
