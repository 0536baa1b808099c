use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::PREDICT_CHUNK;
use super::{
    check_training_set, class_weights, ClassWeight, LearnerConfig, ModelParams, TrainedModel,
};
use crate::error::{Error, Result};
use crate::features::{FeatureSource, Standardizer};
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SgdLoss {
    Logistic,
    ModifiedHuber,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearningRateSchedule {
    /// `eta_t = eta0 / t^power_t`, `t` counting samples from 1.
    InvScaling { eta0: f64, power_t: f64 },
}

impl LearningRateSchedule {
    fn rate(&self, t: u64) -> f64 {
        match *self {
            LearningRateSchedule::InvScaling { eta0, power_t } => eta0 / (t as f64).powf(power_t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub loss: SgdLoss,
    pub l2_alpha: f64,
    pub class_weight: ClassWeight,
    pub epochs: usize,
    pub learning_rate_schedule: LearningRateSchedule,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            loss: SgdLoss::Logistic,
            l2_alpha: 1e-3,
            class_weight: ClassWeight::Balanced,
            epochs: 10,
            learning_rate_schedule: LearningRateSchedule::InvScaling {
                eta0: 0.01,
                power_t: 0.5,
            },
            seed: 0,
        }
    }
}

impl SgdConfig {
    /// Logistic loss, `alpha = 1e-3`, balanced class weights.
    pub fn published_preset() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l2_alpha >= 0.0 && self.l2_alpha.is_finite()) {
            return Err(Error::Config(format!(
                "l2_alpha must be >= 0, got {}",
                self.l2_alpha
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        let LearningRateSchedule::InvScaling { eta0, power_t } = self.learning_rate_schedule;
        if !(eta0 > 0.0 && eta0.is_finite()) {
            return Err(Error::Config(format!("eta0 must be > 0, got {eta0}")));
        }
        if !(power_t >= 0.0 && power_t.is_finite()) {
            return Err(Error::Config(format!(
                "power_t must be >= 0, got {power_t}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub loss: SgdLoss,
    pub standardizer: Standardizer,
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LinearModel {
    #[inline]
    pub fn score(&self, standardized: &[f64]) -> f64 {
        self.bias
            + self
                .weights
                .iter()
                .zip(standardized)
                .map(|(w, x)| w * x)
                .sum::<f64>()
    }

    #[inline]
    pub fn probability(&self, score: f64) -> f64 {
        match self.loss {
            SgdLoss::Logistic => sigmoid(score),
            SgdLoss::ModifiedHuber => (score.clamp(-1.0, 1.0) + 1.0) / 2.0,
        }
    }

    pub(crate) fn predict<S: FeatureSource + ?Sized>(&self, x: &S) -> Result<Vec<f64>> {
        let d = x.n_cols();
        let mut out = Vec::with_capacity(x.n_rows());
        let mut buf = vec![0f32; PREDICT_CHUNK * d];
        let mut xs = vec![0f64; d];
        let mut idx = Vec::with_capacity(PREDICT_CHUNK);
        let mut start = 0;
        while start < x.n_rows() {
            let end = (start + PREDICT_CHUNK).min(x.n_rows());
            idx.clear();
            idx.extend(start..end);
            let slice = &mut buf[..idx.len() * d];
            x.read_rows(&idx, slice)?;
            for row in slice.chunks_exact(d) {
                self.standardizer.apply(row, &mut xs);
                out.push(self.probability(self.score(&xs)));
            }
            start = end;
        }
        Ok(out)
    }
}

/// Derivative of the loss with respect to the score, for `label` in {-1, +1}.
#[inline]
fn loss_derivative(loss: SgdLoss, score: f64, label: f64) -> f64 {
    let z = label * score;
    match loss {
        SgdLoss::Logistic => -label * sigmoid(-z),
        SgdLoss::ModifiedHuber => {
            if z >= 1.0 {
                0.0
            } else if z >= -1.0 {
                -2.0 * label * (1.0 - z)
            } else {
                -4.0 * label
            }
        }
    }
}

const SGD_CHUNK: usize = 1024;

/// Per-sample SGD on class-weighted loss plus `(alpha / 2) |w|^2` over
/// standardized features. The bias is not regularized.
pub fn train_sgd<S: FeatureSource + ?Sized>(
    x: &S,
    y: &[bool],
    cfg: &SgdConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    check_training_set(x, y)?;
    let (n, d) = (x.n_rows(), x.n_cols());
    let standardizer = Standardizer::fit(x)?;
    let cw = class_weights(cfg.class_weight, y)?;
    let mut rng = stream_rng(cfg.seed, stream::SGD_SHUFFLE);
    let mut order: Vec<usize> = (0..n).collect();
    let mut w = vec![0f64; d];
    let mut b = 0f64;
    let mut buf = vec![0f32; SGD_CHUNK * d];
    let mut xs = vec![0f64; d];
    let mut t: u64 = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(SGD_CHUNK) {
            let slice = &mut buf[..chunk.len() * d];
            x.read_rows(chunk, slice)?;
            for (row, &i) in slice.chunks_exact(d).zip(chunk) {
                standardizer.apply(row, &mut xs);
                t += 1;
                let eta = cfg.learning_rate_schedule.rate(t);
                let label = if y[i] { 1.0 } else { -1.0 };
                let score = b + w.iter().zip(&xs).map(|(a, c)| a * c).sum::<f64>();
                let g = loss_derivative(cfg.loss, score, label) * cw[y[i] as usize];
                let shrink = (1.0 - eta * cfg.l2_alpha).max(0.0);
                if g != 0.0 {
                    let step = eta * g;
                    for (wj, xj) in w.iter_mut().zip(&xs) {
                        *wj = *wj * shrink - step * xj;
                    }
                    b -= step;
                } else if shrink != 1.0 {
                    w.iter_mut().for_each(|wj| *wj *= shrink);
                }
            }
        }
        if !b.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
    }
    Ok(TrainedModel {
        params: ModelParams::Linear(LinearModel {
            loss: cfg.loss,
            standardizer,
            weights: w,
            bias: b,
        }),
        feature_dim: d,
        default_threshold: super::SGD_DEFAULT_THRESHOLD,
        config: LearnerConfig::Sgd(cfg.clone()),
        features: None,
    })
}
