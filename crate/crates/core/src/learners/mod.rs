//! Probability-emitting binary classifiers: a linear model trained by SGD, a
//! random forest of CART trees, and a ReLU multilayer perceptron.
//!
//! All learners read features through [`FeatureSource`], take labels as
//! `bool` (true = positive class) and are deterministic given their seed.

mod forest;
mod mlp;
mod model_io;
mod sgd;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSource, FeatureSpec};

pub use forest::{train_rf, Forest, MaxFeatures, RfConfig, Tree, TreeNode};
pub use mlp::{
    train_mlp, Activation, AdamConfig, MlpConfig, MlpLoss, MlpModel, MlpNetwork, OutputUnit,
};
pub use model_io::{decode_model, encode_model, load_model, save_model, MODEL_FORMAT_VERSION};
pub use sgd::{train_sgd, LearningRateSchedule, LinearModel, SgdConfig, SgdLoss};

pub const SGD_DEFAULT_THRESHOLD: f64 = 0.62;
pub const RF_DEFAULT_THRESHOLD: f64 = 0.39;
pub const MLP_DEFAULT_THRESHOLD: f64 = 0.46;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeight {
    #[default]
    Balanced,
    None,
}

/// Per-class weights `[w_negative, w_positive]` with `w_c = n / (2 n_c)`.
pub fn compute_balanced_weights(labels: &[bool]) -> Result<[f64; 2]> {
    let n = labels.len();
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels(format!(
            "need both classes, got {pos} positive and {neg} negative"
        )));
    }
    Ok([n as f64 / (2.0 * neg as f64), n as f64 / (2.0 * pos as f64)])
}

pub(crate) fn class_weights(mode: ClassWeight, labels: &[bool]) -> Result<[f64; 2]> {
    let balanced = compute_balanced_weights(labels)?;
    Ok(match mode {
        ClassWeight::Balanced => balanced,
        ClassWeight::None => [1.0, 1.0],
    })
}

/// Row-count, label and finiteness checks shared by every trainer.
pub(crate) fn check_training_set<S: FeatureSource + ?Sized>(x: &S, y: &[bool]) -> Result<()> {
    if y.len() != x.n_rows() {
        return Err(Error::shape(format!("{} labels", x.n_rows()), y.len()));
    }
    if x.n_cols() == 0 {
        return Err(Error::Validation("feature matrix has no columns".into()));
    }
    compute_balanced_weights(y)?;
    let d = x.n_cols();
    let chunk = 4096;
    let mut buf = vec![0f32; chunk * d];
    let mut idx = Vec::with_capacity(chunk);
    let mut start = 0;
    while start < x.n_rows() {
        let end = (start + chunk).min(x.n_rows());
        idx.clear();
        idx.extend(start..end);
        let slice = &mut buf[..idx.len() * d];
        x.read_rows(&idx, slice)?;
        if let Some(i) = slice.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: start * d + i,
            });
        }
        start = end;
    }
    Ok(())
}

/// A learner and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum LearnerConfig {
    Sgd(SgdConfig),
    Rf(RfConfig),
    Mlp(MlpConfig),
}

impl LearnerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerConfig::Sgd(_) => "sgd",
            LearnerConfig::Rf(_) => "rf",
            LearnerConfig::Mlp(_) => "mlp",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            LearnerConfig::Sgd(c) => c.seed,
            LearnerConfig::Rf(c) => c.seed,
            LearnerConfig::Mlp(c) => c.seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            LearnerConfig::Sgd(c) => c.seed = seed,
            LearnerConfig::Rf(c) => c.seed = seed,
            LearnerConfig::Mlp(c) => c.seed = seed,
        }
        self
    }

    pub fn default_threshold(&self) -> f64 {
        match self {
            LearnerConfig::Sgd(_) => SGD_DEFAULT_THRESHOLD,
            LearnerConfig::Rf(_) => RF_DEFAULT_THRESHOLD,
            LearnerConfig::Mlp(_) => MLP_DEFAULT_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerConfig::Sgd(c) => c.validate(),
            LearnerConfig::Rf(c) => c.validate(),
            LearnerConfig::Mlp(c) => c.validate(),
        }
    }

    pub fn fit<S: FeatureSource + ?Sized>(&self, x: &S, y: &[bool]) -> Result<TrainedModel> {
        match self {
            LearnerConfig::Sgd(c) => train_sgd(x, y, c),
            LearnerConfig::Rf(c) => train_rf(x, y, c),
            LearnerConfig::Mlp(c) => train_mlp(x, y, c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Linear(LinearModel),
    Forest(Forest),
    Mlp(MlpModel),
}

impl ModelParams {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelParams::Linear(_) => "linear",
            ModelParams::Forest(_) => "forest",
            ModelParams::Mlp(_) => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub feature_dim: usize,
    pub default_threshold: f64,
    pub config: LearnerConfig,
    /// Feature layout used at training time, when known.
    pub features: Option<FeatureSpec>,
}

impl TrainedModel {
    pub fn kind(&self) -> &'static str {
        self.params.kind()
    }

    pub fn with_features(mut self, spec: FeatureSpec) -> Self {
        self.features = Some(spec);
        self
    }

    pub fn predict_proba<S: FeatureSource + ?Sized>(&self, x: &S) -> Result<Vec<f64>> {
        predict_proba(self, x)
    }
}

pub(crate) const PREDICT_CHUNK: usize = 2048;

/// `P(positive)` for every row of `x`.
pub fn predict_proba<S: FeatureSource + ?Sized>(model: &TrainedModel, x: &S) -> Result<Vec<f64>> {
    if x.n_cols() != model.feature_dim {
        return Err(Error::shape(
            format!("{} feature columns", model.feature_dim),
            format!("{} feature columns", x.n_cols()),
        ));
    }
    match &model.params {
        ModelParams::Linear(m) => m.predict(x),
        ModelParams::Forest(f) => f.predict(x),
        ModelParams::Mlp(m) => m.predict(x),
    }
}
