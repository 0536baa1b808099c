//! Random forest of CART trees grown on class-weighted Gini impurity.
//!
//! Each tree draws its own bootstrap sample and candidate features from an
//! independent stream keyed by the tree index, so trees can be grown in
//! parallel without changing the result. The forest's soft output is the
//! mean over trees of the weighted positive fraction in the reached leaf.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PREDICT_CHUNK;
use super::{
    check_training_set, class_weights, ClassWeight, LearnerConfig, ModelParams, TrainedModel,
};
use crate::error::{Error, Result};
use crate::features::FeatureSource;
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// `max(1, floor(sqrt(d)))` candidates per split.
    #[default]
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    fn resolve(self, d: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => ((d as f64).sqrt().floor() as usize).max(1),
            MaxFeatures::All => d,
            MaxFeatures::Count(k) => k.clamp(1, d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub class_weight: ClassWeight,
    #[serde(default)]
    pub features_per_split: MaxFeatures,
    #[serde(default = "default_true")]
    pub bootstrap: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl Default for RfConfig {
    fn default() -> Self {
        Self {
            n_estimators: 500,
            max_depth: 50,
            min_samples_leaf: 2,
            min_samples_split: 2,
            class_weight: ClassWeight::Balanced,
            features_per_split: MaxFeatures::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl RfConfig {
    /// 500 trees, depth 50, leaf/split minimum 2, balanced class weights.
    pub fn published_preset() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(Error::Config("n_estimators must be >= 1".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("max_depth must be >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Config("min_samples_split must be >= 2".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be >= 1".into()));
        }
        if let MaxFeatures::Count(0) = self.features_per_split {
            return Err(Error::Config("features_per_split must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    /// Weighted fraction of positive training samples in the leaf.
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf_value(&self, row: &[f32]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if (row[feature as usize] as f64) <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + go(nodes, left as usize).max(go(nodes, right as usize))
                }
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn predict_row(&self, row: &[f32]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.leaf_value(row)).sum();
        sum / self.trees.len() as f64
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
                Ok(buf
                    .chunks_exact(d)
                    .map(|r| self.predict_row(r))
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(parts.concat())
    }
}

struct Grower<'a, S: FeatureSource + ?Sized> {
    x: &'a S,
    y: &'a [bool],
    cw: [f64; 2],
    cfg: &'a RfConfig,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

#[inline]
fn gini_mass(pos: f64, neg: f64) -> f64 {
    // total * gini = total - (pos^2 + neg^2) / total
    let t = pos + neg;
    if t <= 0.0 {
        0.0
    } else {
        t - (pos * pos + neg * neg) / t
    }
}

impl<S: FeatureSource + ?Sized> Grower<'_, S> {
    fn leaf(&mut self, samples: &[usize]) -> u32 {
        let (pos, neg) = self.masses(samples);
        let value = if pos + neg > 0.0 {
            pos / (pos + neg)
        } else {
            0.0
        };
        self.nodes.push(TreeNode::Leaf { value });
        (self.nodes.len() - 1) as u32
    }

    fn masses(&self, samples: &[usize]) -> (f64, f64) {
        samples.iter().fold((0.0, 0.0), |(p, n), &i| {
            if self.y[i] {
                (p + self.cw[1], n)
            } else {
                (p, n + self.cw[0])
            }
        })
    }

    fn best_split(&mut self, samples: &[usize]) -> Result<Option<SplitChoice>> {
        let d = self.x.n_cols();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(&mut self.rng);
        let (pos, neg) = self.masses(samples);
        let parent = gini_mass(pos, neg);
        let min_leaf = self.cfg.min_samples_leaf;
        let n = samples.len();
        let mut values = vec![0f32; n];
        let mut order: Vec<(f32, usize)> = Vec::with_capacity(n);
        let mut best: Option<SplitChoice> = None;
        let mut visited = 0;
        for &f in &features {
            if visited >= self.mtry {
                break;
            }
            self.x.read_column(f, samples, &mut values)?;
            order.clear();
            order.extend(values.iter().copied().zip(samples.iter().copied()));
            order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if order[0].0 == order[n - 1].0 {
                continue;
            }
            let mut found = false;
            let (mut lp, mut ln) = (0.0, 0.0);
            for i in 0..n - 1 {
                if self.y[order[i].1] {
                    lp += self.cw[1];
                } else {
                    ln += self.cw[0];
                }
                let left_count = i + 1;
                if left_count < min_leaf || n - left_count < min_leaf {
                    continue;
                }
                if order[i].0 == order[i + 1].0 {
                    continue;
                }
                found = true;
                let gain = parent - gini_mass(lp, ln) - gini_mass(pos - lp, neg - ln);
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let lo = order[i].0 as f64;
                    let hi = order[i + 1].0 as f64;
                    let mut threshold = (lo + hi) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(SplitChoice {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
            if found {
                visited += 1;
            }
        }
        Ok(best)
    }

    fn grow(&mut self, samples: Vec<usize>, depth: usize) -> Result<u32> {
        let n = samples.len();
        let pure = samples.iter().all(|&i| self.y[i]) || samples.iter().all(|&i| !self.y[i]);
        if pure
            || depth >= self.cfg.max_depth
            || n < self.cfg.min_samples_split
            || n < 2 * self.cfg.min_samples_leaf
        {
            return Ok(self.leaf(&samples));
        }
        let Some(split) = self.best_split(&samples)? else {
            return Ok(self.leaf(&samples));
        };
        let mut values = vec![0f32; n];
        self.x.read_column(split.feature, &samples, &mut values)?;
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for (&s, &v) in samples.iter().zip(&values) {
            if (v as f64) <= split.threshold {
                left.push(s);
            } else {
                right.push(s);
            }
        }
        drop(samples);
        let me = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: f64::NAN });
        let l = self.grow(left, depth + 1)?;
        let r = self.grow(right, depth + 1)?;
        self.nodes[me] = TreeNode::Split {
            feature: split.feature as u32,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        Ok(me as u32)
    }
}

fn grow_tree<S: FeatureSource + ?Sized>(
    x: &S,
    y: &[bool],
    cw: [f64; 2],
    cfg: &RfConfig,
    index: usize,
) -> Result<Tree> {
    let n = x.n_rows();
    let mut rng = stream_rng(cfg.seed, stream::FOREST_BASE + index as u64);
    let samples: Vec<usize> = if cfg.bootstrap {
        let mut s: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        s.sort_unstable();
        s
    } else {
        (0..n).collect()
    };
    let mut grower = Grower {
        x,
        y,
        cw,
        cfg,
        mtry: cfg.features_per_split.resolve(x.n_cols()),
        rng,
        nodes: Vec::new(),
    };
    grower.grow(samples, 0)?;
    Ok(Tree {
        nodes: grower.nodes,
    })
}

pub fn train_rf<S: FeatureSource + ?Sized>(
    x: &S,
    y: &[bool],
    cfg: &RfConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    check_training_set(x, y)?;
    let cw = class_weights(cfg.class_weight, y)?;
    let trees = (0..cfg.n_estimators)
        .into_par_iter()
        .map(|t| grow_tree(x, y, cw, cfg, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainedModel {
        params: ModelParams::Forest(Forest { trees }),
        feature_dim: x.n_cols(),
        default_threshold: super::RF_DEFAULT_THRESHOLD,
        config: LearnerConfig::Rf(cfg.clone()),
        features: None,
    })
}
