//! Confusion counts, pixel Jaccard and accuracies, ROC/AUC, Jaccard-optimal
//! thresholds, stratified cross-validation and mask rendering.

mod cv;
mod render;

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster_io::{write_bytes, Mask};

pub use cv::{kfold_cv, stratified_folds, CvResult};
pub use render::{render_confusion_mask, render_stage2_mask, Stage2Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn from_bools(pred: &[bool], truth: &[bool]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::shape(
                format!("{} predictions", truth.len()),
                pred.len(),
            ));
        }
        let mut c = Confusion::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }
}

pub fn confusion_counts(pred: &Mask, truth: &Mask) -> Result<Confusion> {
    if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
        return Err(Error::shape(
            format!("{}x{} mask", truth.width(), truth.height()),
            format!("{}x{} mask", pred.width(), pred.height()),
        ));
    }
    Confusion::from_bools(&pred.positives(), &truth.positives())
}

/// Which metrics hit a zero denominator and were set to 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DegenerateFlags {
    pub pixel_jaccard: bool,
    pub pos_accuracy: bool,
    pub neg_accuracy: bool,
}

impl DegenerateFlags {
    pub fn any(&self) -> bool {
        self.pixel_jaccard || self.pos_accuracy || self.neg_accuracy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub pixel_jaccard: f64,
    pub pos_accuracy: f64,
    pub neg_accuracy: f64,
    pub balanced_accuracy: f64,
    pub degenerate: DegenerateFlags,
}

fn ratio(num: u64, den: u64, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics_from_confusion(c: &Confusion) -> Rates {
    let mut flags = DegenerateFlags::default();
    let pixel_jaccard = ratio(c.tp, c.tp + c.fn_ + c.fp, &mut flags.pixel_jaccard);
    let pos_accuracy = ratio(c.tp, c.tp + c.fn_, &mut flags.pos_accuracy);
    let neg_accuracy = ratio(c.tn, c.fp + c.tn, &mut flags.neg_accuracy);
    Rates {
        pixel_jaccard,
        pos_accuracy,
        neg_accuracy,
        balanced_accuracy: (pos_accuracy + neg_accuracy) / 2.0,
        degenerate: flags,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pixel_jaccard: f64,
    pub pos_accuracy: f64,
    pub neg_accuracy: f64,
    pub balanced_accuracy: f64,
    pub auc: f64,
    pub threshold: f64,
    pub confusion: Confusion,
    pub degenerate: DegenerateFlags,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Arithmetic mean of every metric; confusion counts are summed.
    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let mut confusion = Confusion::default();
        let mut degenerate = DegenerateFlags::default();
        for r in reports {
            confusion.tp += r.confusion.tp;
            confusion.tn += r.confusion.tn;
            confusion.fp += r.confusion.fp;
            confusion.fn_ += r.confusion.fn_;
            degenerate.pixel_jaccard |= r.degenerate.pixel_jaccard;
            degenerate.pos_accuracy |= r.degenerate.pos_accuracy;
            degenerate.neg_accuracy |= r.degenerate.neg_accuracy;
        }
        Some(MetricsReport {
            pixel_jaccard: avg(|r| r.pixel_jaccard),
            pos_accuracy: avg(|r| r.pos_accuracy),
            neg_accuracy: avg(|r| r.neg_accuracy),
            balanced_accuracy: avg(|r| r.balanced_accuracy),
            auc: avg(|r| r.auc),
            threshold: avg(|r| r.threshold),
            confusion,
            degenerate,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Rows with `p >= threshold` are predicted positive. The first point
    /// uses `+inf`.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_bytes(path.as_ref(), self.to_csv().as_bytes())
    }
}

fn class_counts(truth: &[bool]) -> Result<(u64, u64)> {
    let pos = truth.iter().filter(|&&t| t).count() as u64;
    let neg = truth.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels(format!(
            "need both classes, got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

fn check_probs(probs: &[f64], truth: &[bool]) -> Result<()> {
    if probs.len() != truth.len() {
        return Err(Error::shape(
            format!("{} probabilities", truth.len()),
            probs.len(),
        ));
    }
    if let Some(i) = probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Validation(format!(
            "probability {} at index {i} is outside [0, 1]",
            probs[i]
        )));
    }
    Ok(())
}

/// Rows sorted by descending probability, grouped by equal probability:
/// `(probability, positives, negatives)` per group.
fn descending_groups(probs: &[f64], truth: &[bool]) -> Vec<(f64, u64, u64)> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_unstable_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for i in order {
        let (p, t) = (probs[i], truth[i]);
        match groups.last_mut() {
            Some(g) if g.0 == p => {
                if t {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((p, t as u64, (!t) as u64)),
        }
    }
    groups
}

pub fn roc_curve(probs: &[f64], truth: &[bool]) -> Result<RocCurve> {
    check_probs(probs, truth)?;
    let (pos, neg) = class_counts(truth)?;
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (p, gp, gn) in descending_groups(probs, truth) {
        tp += gp;
        fp += gn;
        points.push(RocPoint {
            threshold: p,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let last = points.last().expect("non-empty");
    if last.fpr != 1.0 || last.tpr != 1.0 {
        points.push(RocPoint {
            threshold: 0.0,
            fpr: 1.0,
            tpr: 1.0,
        });
    }
    Ok(RocCurve { points })
}

pub fn auc_trapezoid(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

pub fn auc(probs: &[f64], truth: &[bool]) -> Result<f64> {
    Ok(auc_trapezoid(&roc_curve(probs, truth)?))
}

/// Threshold maximizing pixel Jaccard under the rule `p >= t`, searched over
/// {0, 1} and midpoints of consecutive unique probabilities. Ties resolve to
/// the smallest threshold.
pub fn optimal_threshold(probs: &[f64], truth: &[bool]) -> Result<(f64, f64)> {
    check_probs(probs, truth)?;
    let (pos, _) = class_counts(truth)?;
    let groups = descending_groups(probs, truth);
    // Each candidate t selects a prefix of the descending groups; evaluate
    // candidates together with the prefix they induce.
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(groups.len() + 2);
    // Prefix length = number of groups with p >= t.
    let prefix = |t: f64| groups.partition_point(|g| g.0 >= t);
    candidates.push((0.0, prefix(0.0)));
    for w in groups.windows(2) {
        let mid = (w[0].0 + w[1].0) / 2.0;
        candidates.push((mid, prefix(mid)));
    }
    candidates.push((1.0, prefix(1.0)));
    let mut cum = vec![(0u64, 0u64); groups.len() + 1];
    for (i, g) in groups.iter().enumerate() {
        cum[i + 1] = (cum[i].0 + g.1, cum[i].1 + g.2);
    }
    let mut best: Option<(f64, f64)> = None;
    for (t, k) in candidates {
        let (tp, fp) = cum[k];
        let fn_ = pos - tp;
        let pj = tp as f64 / (tp + fp + fn_) as f64;
        best = match best {
            Some((bt, bj)) if bj > pj || (bj == pj && bt <= t) => Some((bt, bj)),
            _ => Some((t, pj)),
        };
    }
    Ok(best.expect("at least two candidates"))
}

pub fn threshold_probs(probs: &[f64], threshold: f64) -> Vec<bool> {
    probs.iter().map(|&p| p >= threshold).collect()
}

/// Metrics at a fixed threshold, plus AUC.
pub fn evaluate_at(probs: &[f64], truth: &[bool], threshold: f64) -> Result<MetricsReport> {
    let auc = auc(probs, truth)?;
    let confusion = Confusion::from_bools(&threshold_probs(probs, threshold), truth)?;
    let r = metrics_from_confusion(&confusion);
    Ok(MetricsReport {
        pixel_jaccard: r.pixel_jaccard,
        pos_accuracy: r.pos_accuracy,
        neg_accuracy: r.neg_accuracy,
        balanced_accuracy: r.balanced_accuracy,
        auc,
        threshold,
        confusion,
        degenerate: r.degenerate,
    })
}

/// Metrics at the Jaccard-optimal threshold.
pub fn evaluate_sweep(probs: &[f64], truth: &[bool]) -> Result<MetricsReport> {
    let (t, _) = optimal_threshold(probs, truth)?;
    evaluate_at(probs, truth, t)
}

pub fn save_report(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{}", report.to_json()).map_err(|e| Error::io(path, e))
}
