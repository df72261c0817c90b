//! Classification metrics, the k-fold cross-validation harness, and the
//! trust-spectrum analysis.

pub mod folds;
pub mod report;
pub mod trust;

pub use folds::{kfold, FoldItem, FoldMode, FoldPlan};
pub use report::{evaluate, EvaluationReport, FoldOutcome, MetricsRow};
pub use trust::{trust_spectrum, Group, TrustReport, TrustSpectrum};

use serde::{Deserialize, Serialize};

use crate::classifier::Label;
use crate::error::{Error, Result};

/// One model output on one trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub trial_id: String,
    pub subject_id: String,
    pub true_label: Label,
    /// [p(class0), p(class1)]
    pub probabilities: [f64; 2],
}

impl Prediction {
    pub fn predicted_label(&self) -> Label {
        if self.probabilities[1] > self.probabilities[0] {
            Label::Class1
        } else {
            Label::Class0
        }
    }

    pub fn correct(&self) -> bool {
        self.predicted_label() == self.true_label
    }

    /// Score of the positive class, used by the ranking metrics.
    pub fn score(&self) -> f64 {
        self.probabilities[1]
    }
}

/// Binary confusion counts with class1 as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }
}

/// Scalar metrics with explicit degenerate (0/0) flags: a flagged metric is
/// reported as 0 rather than NaN.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScalarMetrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub mcc: f64,
    pub degenerate: Vec<String>,
}

fn guarded(num: f64, den: f64, name: &str, degenerate: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        degenerate.push(name.to_string());
        0.0
    } else {
        num / den
    }
}

pub fn confusion_and_scalars(preds: &[Prediction]) -> Result<(ConfusionCounts, ScalarMetrics)> {
    if preds.is_empty() {
        return Err(Error::usage("no predictions to score"));
    }
    let mut c = ConfusionCounts::default();
    for p in preds {
        match (p.true_label, p.predicted_label()) {
            (Label::Class1, Label::Class1) => c.true_pos += 1,
            (Label::Class0, Label::Class1) => c.false_pos += 1,
            (Label::Class0, Label::Class0) => c.true_neg += 1,
            (Label::Class1, Label::Class0) => c.false_neg += 1,
        }
    }
    let (tp, fp, tn, fn_) = (
        c.true_pos as f64,
        c.false_pos as f64,
        c.true_neg as f64,
        c.false_neg as f64,
    );
    let mut degenerate = Vec::new();
    let accuracy = (tp + tn) / c.total() as f64;
    let sensitivity = guarded(tp, tp + fn_, "sensitivity", &mut degenerate);
    let specificity = guarded(tn, tn + fp, "specificity", &mut degenerate);
    let f1 = guarded(2.0 * tp, 2.0 * tp + fp + fn_, "f1", &mut degenerate);
    let mcc_den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = guarded(tp * tn - fp * fn_, mcc_den, "mcc", &mut degenerate);
    Ok((
        c,
        ScalarMetrics {
            accuracy,
            sensitivity,
            specificity,
            f1,
            mcc,
            degenerate,
        },
    ))
}

/// ROC AUC as the tie-aware Mann-Whitney statistic, computed through average
/// ranks: (R+ - n1(n1+1)/2) / (n1 n0). Ties contribute half credit.
pub fn roc_auc(preds: &[Prediction]) -> Result<f64> {
    let n1 = preds.iter().filter(|p| p.true_label == Label::Class1).count();
    let n0 = preds.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::UndefinedMetric(
            "roc_auc needs both classes present".into(),
        ));
    }
    let mut indexed: Vec<(f64, bool)> = preds
        .iter()
        .map(|p| (p.score(), p.true_label == Label::Class1))
        .collect();
    indexed.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < indexed.len() {
        let mut j = i;
        while j < indexed.len() && indexed[j].0 == indexed[i].0 {
            j += 1;
        }
        // Average rank of the tie group [i, j), 1-based ranks.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &indexed[i..j] {
            if item.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let n1f = n1 as f64;
    Ok((rank_sum_pos - n1f * (n1f + 1.0) / 2.0) / (n1f * n0 as f64))
}

/// PR AUC by step-wise integration of the precision-recall staircase:
/// sum over thresholds of (recall_k - recall_{k-1}) * precision_k, with tied
/// scores processed as one threshold group (average-precision convention).
pub fn pr_auc(preds: &[Prediction]) -> Result<f64> {
    let n1 = preds.iter().filter(|p| p.true_label == Label::Class1).count();
    if n1 == 0 || n1 == preds.len() {
        return Err(Error::UndefinedMetric(
            "pr_auc needs both classes present".into(),
        ));
    }
    let mut indexed: Vec<(f64, bool)> = preds
        .iter()
        .map(|p| (p.score(), p.true_label == Label::Class1))
        .collect();
    indexed.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite scores"));

    let mut auc = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < indexed.len() {
        let mut j = i;
        while j < indexed.len() && indexed[j].0 == indexed[i].0 {
            j += 1;
        }
        for item in &indexed[i..j] {
            if item.1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / n1 as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        auc += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(auc)
}
