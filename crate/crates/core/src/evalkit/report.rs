//! Fold-wise evaluation reports: per-fold and pooled metric rows, run
//! aggregation, and the CSV / JSON-lines emitters the CLI writes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::Label;
use crate::error::{Error, Result};

use super::{confusion_and_scalars, pr_auc, roc_auc, ConfusionCounts, Prediction, ScalarMetrics};

/// One fold's held-out predictions.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub preds: Vec<Prediction>,
}

#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub n: usize,
    pub counts: ConfusionCounts,
    pub scalars: ScalarMetrics,
    /// Absent when the fold holds a single class.
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
}

fn metrics_row(preds: &[Prediction]) -> Result<MetricsRow> {
    let (counts, scalars) = confusion_and_scalars(preds)?;
    let roc = match roc_auc(preds) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    let pr = match pr_auc(preds) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsRow {
        n: preds.len(),
        counts,
        scalars,
        roc_auc: roc,
        pr_auc: pr,
    })
}

#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub folds: Vec<(usize, MetricsRow)>,
    pub pooled: MetricsRow,
}

/// Score a fold-wise run: per-fold rows plus a pooled row over every
/// prediction. Folds 0..k must all be present and non-empty.
pub fn evaluate(outcomes: &[FoldOutcome], k: usize) -> Result<EvaluationReport> {
    for fold in 0..k {
        let found = outcomes.iter().find(|o| o.fold == fold);
        match found {
            None => return Err(Error::usage(format!("missing predictions for fold {fold}"))),
            Some(o) if o.preds.is_empty() => {
                return Err(Error::usage(format!("fold {fold} has no predictions")))
            }
            _ => {}
        }
    }
    let mut folds = Vec::with_capacity(k);
    let mut pooled_preds = Vec::new();
    let mut sorted: Vec<&FoldOutcome> = outcomes.iter().collect();
    sorted.sort_by_key(|o| o.fold);
    for o in sorted {
        folds.push((o.fold, metrics_row(&o.preds)?));
        pooled_preds.extend(o.preds.iter().cloned());
    }
    let pooled = metrics_row(&pooled_preds)?;
    Ok(EvaluationReport { folds, pooled })
}

/// Mean and population standard deviation over repeated-run metric values.
pub fn aggregate_runs(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV block: one row per fold plus a pooled row. This is also what `eval`
/// prints to stdout.
pub fn report_csv(report: &EvaluationReport) -> String {
    let mut out = String::new();
    out.push_str("fold,n,accuracy,sensitivity,specificity,f1,mcc,roc_auc,pr_auc,degenerate\n");
    let mut row = |name: &str, m: &MetricsRow| {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            name,
            m.n,
            m.scalars.accuracy,
            m.scalars.sensitivity,
            m.scalars.specificity,
            m.scalars.f1,
            m.scalars.mcc,
            fmt_opt(m.roc_auc),
            fmt_opt(m.pr_auc),
            m.scalars.degenerate.join(";")
        );
    };
    for (fold, m) in &report.folds {
        row(&fold.to_string(), m);
    }
    row("pooled", &report.pooled);
    out
}

/// One line of the predictions dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub fold: usize,
    pub trial_id: String,
    pub subject_id: String,
    pub true_label: Label,
    pub probabilities: [f64; 2],
    pub predicted_label: Label,
}

pub fn predictions_jsonl(outcomes: &[FoldOutcome]) -> String {
    let mut out = String::new();
    let mut sorted: Vec<&FoldOutcome> = outcomes.iter().collect();
    sorted.sort_by_key(|o| o.fold);
    for o in sorted {
        for p in &o.preds {
            let record = PredictionRecord {
                fold: o.fold,
                trial_id: p.trial_id.clone(),
                subject_id: p.subject_id.clone(),
                true_label: p.true_label,
                probabilities: p.probabilities,
                predicted_label: p.predicted_label(),
            };
            out.push_str(&serde_json::to_string(&record).expect("record serialises"));
            out.push('\n');
        }
    }
    out
}

pub fn write_report(path: &Path, report: &EvaluationReport) -> Result<()> {
    crate::pipeline::formats::write_atomic(path, report_csv(report).as_bytes())
}

pub fn write_predictions(path: &Path, outcomes: &[FoldOutcome]) -> Result<()> {
    crate::pipeline::formats::write_atomic(path, predictions_jsonl(outcomes).as_bytes())
}

pub fn read_predictions(path: &Path) -> Result<Vec<FoldOutcome>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut by_fold: std::collections::BTreeMap<usize, Vec<Prediction>> = Default::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord = serde_json::from_str(line)
            .map_err(|e| Error::format(path, format!("line {}: {}", lineno + 1, e)))?;
        by_fold.entry(record.fold).or_default().push(Prediction {
            trial_id: record.trial_id,
            subject_id: record.subject_id,
            true_label: record.true_label,
            probabilities: record.probabilities,
        });
    }
    if by_fold.is_empty() {
        return Err(Error::format(path, "no prediction records"));
    }
    Ok(by_fold
        .into_iter()
        .map(|(fold, preds)| FoldOutcome { fold, preds })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(id: usize, true_label: Label, p1: f64) -> Prediction {
        Prediction {
            trial_id: format!("t{id}"),
            subject_id: format!("s{}", id % 3),
            true_label,
            probabilities: [1.0 - p1, p1],
        }
    }

    fn fold(fold: usize, seed: usize) -> FoldOutcome {
        FoldOutcome {
            fold,
            preds: vec![
                pred(seed, Label::Class1, 0.8),
                pred(seed + 1, Label::Class0, 0.3),
                pred(seed + 2, Label::Class1, 0.4),
            ],
        }
    }

    #[test]
    fn single_fold_pooled_equals_per_fold() {
        let outcomes = vec![fold(0, 0)];
        let report = evaluate(&outcomes, 1).unwrap();
        assert_eq!(report.folds.len(), 1);
        let f = &report.folds[0].1;
        assert_eq!(f.scalars.accuracy, report.pooled.scalars.accuracy);
        assert_eq!(f.n, report.pooled.n);
    }

    #[test]
    fn identical_folds_have_zero_std() {
        let accs: Vec<f64> = (0..10)
            .map(|i| {
                let report = evaluate(&[fold(0, 0)], 1).unwrap();
                let _ = i;
                report.pooled.scalars.accuracy
            })
            .collect();
        let (mean, std) = aggregate_runs(&accs);
        assert_eq!(mean, accs[0]);
        assert_eq!(std, 0.0);
    }

    #[test]
    fn aggregation_matches_scalar_oracle() {
        let values = [0.8, 0.9, 0.7, 0.85, 0.95, 0.75, 0.8, 0.9, 0.85, 0.8];
        let (mean, std) = aggregate_runs(&values);
        let m: f64 = values.iter().sum::<f64>() / 10.0;
        let v: f64 = values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 10.0;
        assert!((mean - m).abs() < 1e-15);
        assert!((std - v.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn missing_fold_is_a_usage_error() {
        let outcomes = vec![fold(0, 0), fold(2, 3)];
        assert!(evaluate(&outcomes, 3).is_err());
    }

    #[test]
    fn csv_and_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let outcomes = vec![fold(0, 0), fold(1, 10)];
        let report = evaluate(&outcomes, 2).unwrap();
        let csv = report_csv(&report);
        assert!(csv.starts_with("fold,n,accuracy"));
        assert_eq!(csv.lines().count(), 1 + 2 + 1);

        let path = dir.path().join("preds.jsonl");
        write_predictions(&path, &outcomes).unwrap();
        let back = read_predictions(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].preds.len(), 3);
        assert_eq!(back[1].preds[0].probabilities, [0.19999999999999996, 0.8]);
        // Deterministic re-serialisation.
        assert_eq!(predictions_jsonl(&back), predictions_jsonl(&outcomes));
    }
}
