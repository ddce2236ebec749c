use serde::{Deserialize, Serialize};

use super::{GradientBundle, QNetworkParams};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
        }
    }

    pub fn for_params(params: &QNetworkParams) -> Self {
        Self::new(params.len())
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut QNetworkParams,
    grads: &GradientBundle,
    adam: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || adam.first_moment.len() != n || adam.second_moment.len() != n {
        return Err(Error::Dimension(format!(
            "adam step over {n} parameters got {} gradients and {}/{} moments",
            grads.len(),
            adam.first_moment.len(),
            adam.second_moment.len()
        )));
    }
    adam.step_count += 1;
    let t = adam.step_count as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let p = params.values_mut();
    for i in 0..n {
        let g = grads.values()[i];
        let m = ADAM_BETA1 * adam.first_moment[i] + (1.0 - ADAM_BETA1) * g;
        let v = ADAM_BETA2 * adam.second_moment[i] + (1.0 - ADAM_BETA2) * g * g;
        adam.first_moment[i] = m;
        adam.second_moment[i] = v;
        p[i] -= lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS);
    }
    Ok(())
}
