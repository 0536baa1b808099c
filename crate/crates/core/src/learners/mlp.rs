use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sgd::sigmoid;
use super::PREDICT_CHUNK;
use super::{
    check_training_set, class_weights, ClassWeight, LearnerConfig, ModelParams, TrainedModel,
};
use crate::error::{Error, Result};
use crate::features::{FeatureSource, Standardizer};
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputUnit {
    #[default]
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpLoss {
    #[default]
    BinaryCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_layer_sizes: Vec<usize>,
    pub max_iter: usize,
    pub activation: Activation,
    pub output: OutputUnit,
    pub loss: MlpLoss,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub early_stop_tol: f64,
    pub patience: usize,
    pub class_weight: ClassWeight,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_layer_sizes: vec![75, 25, 100, 20, 75, 25],
            max_iter: 1000,
            activation: Activation::Relu,
            output: OutputUnit::Sigmoid,
            loss: MlpLoss::BinaryCrossEntropy,
            optimizer: AdamConfig::default(),
            batch_size: 256,
            early_stop_tol: 1e-4,
            patience: 10,
            class_weight: ClassWeight::Balanced,
            seed: 0,
        }
    }
}

impl MlpConfig {
    /// Hidden layers (75, 25, 100, 20, 75, 25), at most 1000 epochs.
    pub fn published_preset() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layer_sizes.is_empty() {
            return Err(Error::Config(
                "at least one hidden layer is required".into(),
            ));
        }
        if self.hidden_layer_sizes.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be >= 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let a = &self.optimizer;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                a.lr
            )));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(a.eps > 0.0) {
            return Err(Error::Config("Adam eps must be > 0".into()));
        }
        if !(self.early_stop_tol >= 0.0) {
            return Err(Error::Config("early_stop_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Fully connected network with one logit output. Parameters are stored
/// flat, layer by layer: an `out x in` row-major weight block followed by
/// `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

impl MlpNetwork {
    /// He-normal weights, zero biases.
    pub fn new(input: usize, hidden: &[usize], activation: Activation, seed: u64) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut rng = stream_rng(seed, stream::MLP_INIT);
        let mut params = Vec::with_capacity(Self::count(&sizes));
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive sd");
            params.extend((0..fan_in * fan_out).map(|_| normal.sample(&mut rng)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            sizes,
            activation,
            params,
        }
    }

    pub fn from_parts(sizes: Vec<usize>, activation: Activation, params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 3 || sizes.contains(&0) || *sizes.last().unwrap() != 1 {
            return Err(Error::format(
                "sizes",
                format!("invalid layer sizes {sizes:?}"),
            ));
        }
        if params.len() != Self::count(&sizes) {
            return Err(Error::SizeMismatch {
                expected: Self::count(&sizes),
                actual: params.len(),
            });
        }
        Ok(Self {
            sizes,
            activation,
            params,
        })
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.params.len(), "parameter count");
        self.params.copy_from_slice(params);
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    /// Output logit for one standardized row.
    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for l in 0..=last {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            a = (0..n_out)
                .map(|j| {
                    let z = b[j] + dot(&w[j * n_in..(j + 1) * n_in], &a);
                    if l == last {
                        z
                    } else {
                        self.activation.apply(z)
                    }
                })
                .collect();
        }
        a[0]
    }

    /// Class-weighted binary cross-entropy on logits, averaged over the
    /// batch, and its gradient with respect to every parameter. `x` holds
    /// `y.len()` standardized rows.
    pub fn loss_and_gradient(&self, x: &[f64], y: &[bool], cw: [f64; 2]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.accumulate(x, y, cw, &mut grad);
        let n = y.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }

    /// Summed (not averaged) loss; adds summed gradients into `grad`.
    fn accumulate(&self, x: &[f64], y: &[bool], cw: [f64; 2], grad: &mut [f64]) -> f64 {
        let d = self.sizes[0];
        let layers = self.sizes.len() - 1;
        let mut zs: Vec<Vec<f64>> = self.sizes[1..].iter().map(|&s| vec![0.0; s]).collect();
        let mut acts: Vec<Vec<f64>> = self.sizes[1..].iter().map(|&s| vec![0.0; s]).collect();
        let mut delta: Vec<Vec<f64>> = self.sizes[1..].iter().map(|&s| vec![0.0; s]).collect();
        let offsets = self.offsets();
        let mut total = 0.0;
        for (row, &label) in x.chunks_exact(d).zip(y) {
            for l in 0..layers {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                let off = offsets[l];
                let w = &self.params[off..off + n_in * n_out];
                let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
                let input: &[f64] = if l == 0 { row } else { &acts[l - 1] };
                let mut z_out = std::mem::take(&mut zs[l]);
                for j in 0..n_out {
                    z_out[j] = b[j] + dot(&w[j * n_in..(j + 1) * n_in], input);
                }
                let a_out = &mut acts[l];
                for j in 0..n_out {
                    a_out[j] = if l + 1 == layers {
                        z_out[j]
                    } else {
                        self.activation.apply(z_out[j])
                    };
                }
                zs[l] = z_out;
            }
            let z = zs[layers - 1][0];
            let t = if label { 1.0 } else { 0.0 };
            let weight = cw[label as usize];
            total += weight * (z.max(0.0) - t * z + (-z.abs()).exp().ln_1p());
            delta[layers - 1][0] = weight * (sigmoid(z) - t);
            for l in (0..layers).rev() {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                let off = offsets[l];
                let input: &[f64] = if l == 0 { row } else { &acts[l - 1] };
                let (gw, rest) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for j in 0..n_out {
                    let dj = delta[l][j];
                    if dj == 0.0 {
                        continue;
                    }
                    rest[j] += dj;
                    for (g, &a) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(input) {
                        *g += dj * a;
                    }
                }
                if l > 0 {
                    let w = &self.params[off..off + n_in * n_out];
                    let (lower, upper) = delta.split_at_mut(l);
                    let below = &mut lower[l - 1];
                    for (i, bi) in below.iter_mut().enumerate() {
                        let mut s = 0.0;
                        for j in 0..n_out {
                            s += w[j * n_in + i] * upper[0][j];
                        }
                        *bi = s * self.activation.derivative(zs[l - 1][i]);
                    }
                }
            }
        }
        total
    }

    fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.sizes.len() - 1);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            out.push(off);
            off += w[0] * w[1] + w[1];
        }
        out
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub standardizer: Standardizer,
    pub network: MlpNetwork,
    /// Epochs actually run before stopping.
    pub epochs_run: usize,
}

impl MlpModel {
    pub fn probability(&self, row: &[f32]) -> f64 {
        let mut xs = vec![0.0; row.len()];
        self.standardizer.apply(row, &mut xs);
        sigmoid(self.network.logit(&xs))
    }

    pub(crate) fn predict<S: FeatureSource + ?Sized>(&self, x: &S) -> Result<Vec<f64>> {
        let d = x.n_cols();
        let n = x.n_rows();
        let starts: Vec<usize> = (0..n).step_by(PREDICT_CHUNK).collect();
        let parts = starts
            .par_iter()
            .map(|&start| {
                let idx: Vec<usize> = (start..(start + PREDICT_CHUNK).min(n)).collect();
                let mut buf = vec![0f32; idx.len() * d];
                x.read_rows(&idx, &mut buf)?;
                let mut xs = vec![0.0; d];
                Ok(buf
                    .chunks_exact(d)
                    .map(|r| {
                        self.standardizer.apply(r, &mut xs);
                        sigmoid(self.network.logit(&xs))
                    })
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(parts.concat())
    }
}

/// Rows per parallel gradient slice. Slices are summed in order so the
/// result does not depend on the thread count.
const GRAD_SLICE: usize = 32;

pub fn train_mlp<S: FeatureSource + ?Sized>(
    x: &S,
    y: &[bool],
    cfg: &MlpConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    check_training_set(x, y)?;
    let (n, d) = (x.n_rows(), x.n_cols());
    let standardizer = Standardizer::fit(x)?;
    let cw = class_weights(cfg.class_weight, y)?;
    let mut net = MlpNetwork::new(d, &cfg.hidden_layer_sizes, cfg.activation, cfg.seed);
    let p = net.params.len();
    let adam = cfg.optimizer;
    let (mut m, mut v) = (vec![0.0; p], vec![0.0; p]);
    let mut step: i32 = 0;
    let mut rng = stream_rng(cfg.seed, stream::MLP_SHUFFLE);
    let mut order: Vec<usize> = (0..n).collect();
    let mut raw = vec![0f32; cfg.batch_size.min(n) * d];
    let mut xs = vec![0f64; cfg.batch_size.min(n) * d];
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_iter {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len();
            x.read_rows(batch, &mut raw[..b * d])?;
            for (src, dst) in raw[..b * d]
                .chunks_exact(d)
                .zip(xs[..b * d].chunks_exact_mut(d))
            {
                standardizer.apply(src, dst);
            }
            let labels: Vec<bool> = batch.iter().map(|&i| y[i]).collect();
            let slices: Vec<(f64, Vec<f64>)> = (0..b)
                .step_by(GRAD_SLICE)
                .collect::<Vec<_>>()
                .par_iter()
                .map(|&s| {
                    let e = (s + GRAD_SLICE).min(b);
                    let mut g = vec![0.0; p];
                    let l = net.accumulate(&xs[s * d..e * d], &labels[s..e], cw, &mut g);
                    (l, g)
                })
                .collect();
            let mut loss = 0.0;
            let mut grad = vec![0.0; p];
            for (l, g) in slices {
                loss += l;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            epoch_loss += loss;
            let inv = 1.0 / b as f64;
            step += 1;
            let c1 = 1.0 - adam.beta1.powi(step);
            let c2 = 1.0 - adam.beta2.powi(step);
            for i in 0..p {
                let g = grad[i] * inv;
                m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * g;
                v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * g * g;
                net.params[i] -= adam.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + adam.eps);
            }
        }
        if net.params.iter().any(|w| !w.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        let epoch_loss = epoch_loss / n as f64;
        if epoch_loss > best - cfg.early_stop_tol {
            stale += 1;
        } else {
            stale = 0;
        }
        best = best.min(epoch_loss);
        if stale >= cfg.patience {
            break;
        }
    }
    Ok(TrainedModel {
        params: ModelParams::Mlp(MlpModel {
            standardizer,
            network: net,
            epochs_run,
        }),
        feature_dim: d,
        default_threshold: super::MLP_DEFAULT_THRESHOLD,
        config: LearnerConfig::Mlp(cfg.clone()),
        features: None,
    })
}
