//! Classification metrics with TB as the positive class.

use serde::{Deserialize, Serialize};

use crate::domain::{ConfusionMatrix, Label};
use crate::error::{Result, TpisError};

pub fn confusion(y_true: &[Label], y_pred: &[Label]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(TpisError::LengthMismatch { left: y_true.len(), right: y_pred.len() });
    }
    if y_true.is_empty() {
        return Err(TpisError::EmptyEvaluation);
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        cm.record(t, p);
    }
    Ok(cm)
}

/// Accuracy, precision, recall and F-score. A ratio whose denominator is
/// zero is reported as 0 and flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasicMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub precision_degenerate: bool,
    pub recall_degenerate: bool,
    pub f_degenerate: bool,
}

impl BasicMetrics {
    pub fn is_degenerate(&self) -> bool {
        self.precision_degenerate || self.recall_degenerate || self.f_degenerate
    }
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

pub fn basic_metrics(cm: &ConfusionMatrix) -> Result<BasicMetrics> {
    let n = cm.total();
    if n == 0 {
        return Err(TpisError::EmptyEvaluation);
    }
    let (tp, fp, fn_, tn) = (cm.tp as f64, cm.fp as f64, cm.fn_ as f64, cm.tn as f64);
    let (precision, precision_degenerate) = ratio(tp, tp + fp);
    let (recall, recall_degenerate) = ratio(tp, tp + fn_);
    let (f_score, f_degenerate) = ratio(2.0 * precision * recall, precision + recall);
    Ok(BasicMetrics {
        accuracy: (tp + tn) / n as f64,
        precision,
        recall,
        f_score,
        precision_degenerate,
        recall_degenerate,
        f_degenerate,
    })
}

/// ROC points `(fpr, tpr)` from (0, 0) to (1, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (x, y) in &self.points {
            out.push_str(&format!("{x},{y}\n"));
        }
        out
    }
}

/// ROC curve over descending unique score thresholds and its trapezoidal
/// area. Tied scores move along a diagonal, which counts tied pairs as ½.
pub fn roc_auc(scores: &[f64], y_true: &[Label]) -> Result<(RocCurve, f64)> {
    if scores.len() != y_true.len() {
        return Err(TpisError::LengthMismatch { left: scores.len(), right: y_true.len() });
    }
    let pos = y_true.iter().filter(|l| l.is_tb()).count();
    let neg = y_true.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(TpisError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    // Twice the area in units of (1/neg)·(1/pos) keeps the sum exact.
    let mut area2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if y_true[order[i]].is_tb() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += ((fp - fp0) * (tp + tp0)) as u64;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = area2 as f64 / (2.0 * pos as f64 * neg as f64);
    Ok((RocCurve { points }, auc))
}

/// Mean and 95% half-width `1.96·sd/√R` (sample standard deviation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
}

pub const Z_95: f64 = 1.96;

pub fn summarize(values: &[f64]) -> Estimate {
    let r = values.len();
    if r == 0 {
        return Estimate { mean: f64::NAN, half_width: f64::NAN };
    }
    // A constant stream has no spread; summing would leave rounding noise.
    if values.iter().all(|&v| v == values[0]) {
        return Estimate { mean: values[0], half_width: 0.0 };
    }
    let mean = values.iter().sum::<f64>() / r as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
    Estimate { mean, half_width: Z_95 * var.sqrt() / (r as f64).sqrt() }
}

/// Metrics of one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub basic: BasicMetrics,
    pub auc: f64,
}

pub fn evaluate_scores(scores: &[f64], predicted: &[Label], y_true: &[Label]) -> Result<RunMetrics> {
    let basic = basic_metrics(&confusion(y_true, predicted)?)?;
    let (_, auc) = roc_auc(scores, y_true)?;
    Ok(RunMetrics { basic, auc })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub runs: usize,
    pub accuracy: Estimate,
    pub auc: Estimate,
    pub precision: Estimate,
    pub recall: Estimate,
    pub f_score: Estimate,
    /// Runs with at least one zero-denominator ratio.
    pub degenerate_runs: usize,
}

impl MetricReport {
    pub fn from_runs(runs: &[RunMetrics]) -> Result<Self> {
        if runs.is_empty() {
            return Err(TpisError::EmptyEvaluation);
        }
        let col = |f: fn(&RunMetrics) -> f64| summarize(&runs.iter().map(f).collect::<Vec<_>>());
        Ok(Self {
            runs: runs.len(),
            accuracy: col(|r| r.basic.accuracy),
            auc: col(|r| r.auc),
            precision: col(|r| r.basic.precision),
            recall: col(|r| r.basic.recall),
            f_score: col(|r| r.basic.f_score),
            degenerate_runs: runs.iter().filter(|r| r.basic.is_degenerate()).count(),
        })
    }

    /// Estimates in display order: accuracy, AUC, precision, recall, F-score.
    pub fn estimates(&self) -> [Estimate; 5] {
        [self.accuracy, self.auc, self.precision, self.recall, self.f_score]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Pneumonia as P, Tb as T};

    #[test]
    fn confusion_counts() {
        let cm = confusion(&[T, T, P, P], &[T, P, P, T]).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 1, fp: 1, fn_: 1, tn: 1 });
        let all_tb = confusion(&[T, P, P], &[T, T, T]).unwrap();
        assert_eq!((all_tb.tn, all_tb.fn_), (0, 0));
        assert!(matches!(confusion(&[T], &[]), Err(TpisError::LengthMismatch { .. })));
        assert_eq!(confusion(&[], &[]), Err(TpisError::EmptyEvaluation));
    }

    #[test]
    fn metric_examples() {
        let m = basic_metrics(&ConfusionMatrix { tp: 3, fp: 1, fn_: 1, tn: 5 }).unwrap();
        assert!((m.accuracy - 0.8).abs() < 1e-15);
        assert!((m.precision - 0.75).abs() < 1e-15);
        assert!((m.recall - 0.75).abs() < 1e-15);
        assert!((m.f_score - 0.75).abs() < 1e-15);
        assert!(!m.is_degenerate());

        let d = basic_metrics(&ConfusionMatrix { tp: 0, fp: 0, fn_: 2, tn: 8 }).unwrap();
        assert!(d.precision_degenerate);
        assert_eq!(d.precision, 0.0);
        assert_eq!(basic_metrics(&ConfusionMatrix::default()), Err(TpisError::EmptyEvaluation));
    }

    #[test]
    fn auc_examples() {
        let (_, auc) = roc_auc(&[0.9, 0.8, 0.4, 0.3], &[T, P, T, P]).unwrap();
        assert_eq!(auc, 0.75);
        let (_, auc) = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[T, T, P, P]).unwrap();
        assert_eq!(auc, 1.0);
        let (curve, auc) = roc_auc(&[0.5; 6], &[T, P, T, P, P, P]).unwrap();
        assert_eq!(auc, 0.5);
        assert_eq!(curve.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(roc_auc(&[0.1, 0.2], &[T, T]).unwrap_err(), TpisError::DegenerateLabels);
    }

    #[test]
    fn summary_half_widths() {
        assert_eq!(summarize(&[0.7]).half_width, 0.0);
        assert_eq!(summarize(&[0.9; 30]).half_width, 0.0);
        let e = summarize(&[1.0, 3.0]);
        assert_eq!(e.mean, 2.0);
        assert!((e.half_width - 1.96 * 2f64.sqrt() / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn half_width_shrinks_with_runs() {
        // Alternating ±1 has the same sample variance profile at every even R.
        let stream = |r: usize| -> Vec<f64> { (0..r).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect() };
        let sd = |r: usize| ((r as f64) / (r as f64 - 1.0)).sqrt();
        for r in [4usize, 16, 64, 256] {
            let hw = summarize(&stream(r)).half_width;
            assert!((hw - Z_95 * sd(r) / (r as f64).sqrt()).abs() < 1e-12);
        }
        let a = summarize(&stream(16)).half_width / sd(16);
        let b = summarize(&stream(64)).half_width / sd(64);
        assert!((a / b - 2.0).abs() < 1e-12);
    }
}
