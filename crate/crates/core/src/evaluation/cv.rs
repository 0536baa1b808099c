use rand::seq::SliceRandom;
use serde::Serialize;

use super::{auc, evaluate_at, optimal_threshold, MetricsReport};
use crate::error::{Error, Result};
use crate::features::{FeatureSource, RowSubset};
use crate::learners::LearnerConfig;
use crate::rng::{stream, stream_rng};

/// Fold id per row. Each class is shuffled separately and dealt round-robin,
/// the dealing position carrying over from one class to the next so fold
/// sizes differ by at most one.
pub fn stratified_folds(y: &[bool], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    let mut rng = stream_rng(seed, stream::CV_FOLDS);
    let mut assignment = vec![0usize; y.len()];
    let mut next = 0usize;
    for class in [false, true] {
        let mut rows: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if rows.len() < folds {
            return Err(Error::Config(format!(
                "class {} has {} rows, too few for {folds} stratified folds",
                if class { "positive" } else { "negative" },
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        for i in rows {
            assignment[i] = next;
            next = (next + 1) % folds;
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub folds: Vec<MetricsReport>,
    pub mean: MetricsReport,
    /// Held-out probability for every row, from the fold that held it out.
    #[serde(skip)]
    pub out_of_fold: Vec<f64>,
}

/// Stratified k-fold CV. Each fold trains `learner` on the remaining folds
/// and is scored at its own Jaccard-optimal threshold.
pub fn kfold_cv<S: FeatureSource + ?Sized>(
    x: &S,
    y: &[bool],
    folds: usize,
    learner: &LearnerConfig,
    seed: u64,
) -> Result<CvResult> {
    if y.len() != x.n_rows() {
        return Err(Error::shape(format!("{} labels", x.n_rows()), y.len()));
    }
    learner.validate()?;
    let assignment = stratified_folds(y, folds, seed)?;
    let mut reports = Vec::with_capacity(folds);
    let mut out_of_fold = vec![0.0; y.len()];
    for f in 0..folds {
        let (test, train): (Vec<usize>, Vec<usize>) =
            (0..y.len()).partition(|&i| assignment[i] == f);
        let y_train: Vec<bool> = train.iter().map(|&i| y[i]).collect();
        let y_test: Vec<bool> = test.iter().map(|&i| y[i]).collect();
        let model = learner.fit(&RowSubset::new(x, train)?, &y_train)?;
        let probs = model.predict_proba(&RowSubset::new(x, test.clone())?)?;
        let (t, _) = optimal_threshold(&probs, &y_test)?;
        let report = evaluate_at(&probs, &y_test, t)?;
        debug_assert_eq!(report.auc, auc(&probs, &y_test)?);
        for (&i, &p) in test.iter().zip(&probs) {
            out_of_fold[i] = p;
        }
        reports.push(report);
    }
    let mean = MetricsReport::mean(&reports).expect("at least two folds");
    Ok(CvResult {
        folds: reports,
        mean,
        out_of_fold,
    })
}
