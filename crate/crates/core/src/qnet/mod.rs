//! Bidirectional LSTM Q-network with hand-derived gradients.
//!
//! Each frame `n` contributes the feature pair `(q_n, h_n / history_scale)`.
//! The features pass through an affine embedding, a forward and a backward
//! LSTM over the frame axis, and a per-frame head
//! `affine(2H -> M) -> tanh -> affine(M -> 1)` that yields `Q_n`. Weights are
//! shared across frames, so one network serves any sequence length.
//!
//! All parameters live in one flat `f64` buffer in this fixed order
//! (matrices row-major, LSTM gates ordered input, forget, cell, output):
//!
//! | tensor       | shape     |
//! |--------------|-----------|
//! | `embed_w`    | `E × F`   |
//! | `embed_b`    | `E`       |
//! | `fwd_w_ih`   | `4H × E`  |
//! | `fwd_w_hh`   | `4H × H`  |
//! | `fwd_b`      | `4H`      |
//! | `bwd_w_ih`   | `4H × E`  |
//! | `bwd_w_hh`   | `4H × H`  |
//! | `bwd_b`      | `4H`      |
//! | `head_w1`    | `M × 2H`  |
//! | `head_b1`    | `M`       |
//! | `head_w2`    | `M`       |
//! | `head_b2`    | `1`       |

mod adam;
mod gradcheck;
mod io;
mod network;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use gradcheck::{
    gradient_check, gradient_survey, relative_error, GradCheck, GradSurvey, FD_STEP, REL_ERR_FLOOR,
    SURVEY_COORDS,
};
pub use io::{load_params, read_params, save_params, write_params, MAGIC, VERSION};
pub use network::{batch_loss_and_grad, forward, forward_batch, loss_and_grad, Sample};

use crate::error::{Error, Result};

/// Per-frame input features: quality and normalized history.
pub const FEATURES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QNetConfig {
    pub embed: usize,
    pub hidden: usize,
    pub head: usize,
    /// History counts are divided by this before entering the network;
    /// normally the episode horizon.
    pub history_scale: f64,
    pub use_quality: bool,
    pub use_history: bool,
}

impl Default for QNetConfig {
    fn default() -> Self {
        QNetConfig {
            embed: 32,
            hidden: 64,
            head: 64,
            history_scale: 8.0,
            use_quality: true,
            use_history: true,
        }
    }
}

impl QNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed == 0 || self.hidden == 0 || self.head == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        if !(self.history_scale > 0.0 && self.history_scale.is_finite()) {
            return Err(Error::Config(format!(
                "history_scale must be positive, got {}",
                self.history_scale
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

/// Offsets of every tensor inside the flat parameter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub embed: usize,
    pub hidden: usize,
    pub head: usize,
    pub embed_w: usize,
    pub embed_b: usize,
    pub lstm: [LstmLayout; 2],
    pub head_w1: usize,
    pub head_b1: usize,
    pub head_w2: usize,
    pub head_b2: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmLayout {
    pub w_ih: usize,
    pub w_hh: usize,
    pub b: usize,
}

impl Layout {
    fn new(c: &QNetConfig) -> Self {
        let (e, h, m) = (c.embed, c.hidden, c.head);
        let mut off = 0;
        let mut take = |n: usize| {
            let at = off;
            off += n;
            at
        };
        let embed_w = take(e * FEATURES);
        let embed_b = take(e);
        let mut lstm = [LstmLayout { w_ih: 0, w_hh: 0, b: 0 }; 2];
        for l in &mut lstm {
            l.w_ih = take(4 * h * e);
            l.w_hh = take(4 * h * h);
            l.b = take(4 * h);
        }
        let head_w1 = take(m * 2 * h);
        let head_b1 = take(m);
        let head_w2 = take(m);
        let head_b2 = take(1);
        Layout {
            embed: e,
            hidden: h,
            head: m,
            embed_w,
            embed_b,
            lstm,
            head_w1,
            head_b1,
            head_w2,
            head_b2,
            len: off,
        }
    }

    /// `(name, offset, len, fan_in)` of every tensor, in storage order.
    pub fn tensors(&self) -> Vec<(&'static str, usize, usize, usize)> {
        let (e, h, m) = (self.embed, self.hidden, self.head);
        let mut v = vec![
            ("embed_w", self.embed_w, e * FEATURES, FEATURES),
            ("embed_b", self.embed_b, e, FEATURES),
        ];
        for (l, names) in self
            .lstm
            .iter()
            .zip([["fwd_w_ih", "fwd_w_hh", "fwd_b"], ["bwd_w_ih", "bwd_w_hh", "bwd_b"]])
        {
            v.push((names[0], l.w_ih, 4 * h * e, h));
            v.push((names[1], l.w_hh, 4 * h * h, h));
            v.push((names[2], l.b, 4 * h, h));
        }
        v.push(("head_w1", self.head_w1, m * 2 * h, 2 * h));
        v.push(("head_b1", self.head_b1, m, 2 * h));
        v.push(("head_w2", self.head_w2, m, m));
        v.push(("head_b2", self.head_b2, 1, m));
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetworkParams {
    config: QNetConfig,
    values: Vec<f64>,
}

impl QNetworkParams {
    /// Uniform `±1/sqrt(fan_in)` initialization with forget-gate bias `1.0`.
    pub fn init(config: QNetConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let mut values = vec![0.0; layout.len];
        for (_, off, len, fan_in) in layout.tensors() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut values[off..off + len] {
                *v = rng.random_range(-bound..bound);
            }
        }
        let h = config.hidden;
        for l in &layout.lstm {
            values[l.b + h..l.b + 2 * h].fill(1.0);
        }
        Ok(QNetworkParams { config, values })
    }

    pub fn zeros(config: QNetConfig) -> Result<Self> {
        config.validate()?;
        let len = config.layout().len;
        Ok(QNetworkParams {
            config,
            values: vec![0.0; len],
        })
    }

    pub fn from_values(config: QNetConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let expected = config.layout().len;
        if values.len() != expected {
            return Err(Error::Dimension(format!(
                "expected {expected} parameters, got {}",
                values.len()
            )));
        }
        Ok(QNetworkParams { config, values })
    }

    pub fn config(&self) -> &QNetConfig {
        &self.config
    }

    pub fn layout(&self) -> Layout {
        self.config.layout()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Gradient of a scalar loss with respect to every parameter, stored in the
/// same order as [`QNetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    values: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros_like(params: &QNetworkParams) -> Self {
        GradientBundle {
            values: vec![0.0; params.len()],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        GradientBundle { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_is_contiguous() {
        let c = QNetConfig::default();
        let l = c.layout();
        let mut expected = 0;
        for (_, off, len, _) in l.tensors() {
            assert_eq!(off, expected);
            expected += len;
        }
        assert_eq!(expected, l.len);
        // 2*32+32 + 2*(256*32 + 256*64 + 256) + 64*128 + 64 + 64 + 1
        assert_eq!(l.len, 96 + 2 * 24832 + 8192 + 129);
    }

    #[test]
    fn init_respects_bounds_and_forget_bias() {
        let c = QNetConfig::default();
        let p = QNetworkParams::init(c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let l = p.layout();
        let h = c.hidden;
        for lstm in &l.lstm {
            assert!(p.values()[lstm.b + h..lstm.b + 2 * h].iter().all(|&b| b == 1.0));
        }
        let bound = 1.0 / (2.0f64 * h as f64).sqrt();
        assert!(p.values()[l.head_w1..l.head_b1].iter().all(|v| v.abs() <= bound));
        assert!(p.is_finite());
    }
}
