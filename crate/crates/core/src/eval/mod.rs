//! Classification metrics over a declared class set.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod report;
pub mod sweep;

pub use report::{emit_report, format_sig, ReportFormat};
pub use sweep::{dp_sweep, SweepPoint, SweepResult};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no predictions to score")]
    EmptyPredictions,
    #[error("label {0:?} is not in the declared class set")]
    UnknownLabel(String),
    #[error("class set must not be empty")]
    EmptyClassSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True instances of this class.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    /// Classes whose precision or recall had an empty denominator and were
    /// reported as 0.
    pub degenerate_classes: Vec<String>,
    pub n: usize,
}

impl MetricsReport {
    pub fn class_metrics(&self, class: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|m| m.class == class)
    }
}

/// Standard confusion-matrix metrics. Empty precision/recall denominators
/// report 0 and flag the class as degenerate; macro averages are unweighted
/// means over the declared class set.
pub fn compute_metrics(
    predictions: &[(String, String)],
    classes: &[String],
) -> Result<MetricsReport, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::EmptyPredictions);
    }
    if classes.is_empty() {
        return Err(EvalError::EmptyClassSet);
    }
    let index_of = |label: &String| -> Result<usize, EvalError> {
        classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| EvalError::UnknownLabel(label.clone()))
    };

    let k = classes.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (truth, predicted) in predictions {
        confusion[index_of(truth)?][index_of(predicted)?] += 1;
    }

    let total = predictions.len();
    let mut per_class = Vec::with_capacity(k);
    let mut degenerate = Vec::new();
    for c in 0..k {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let mut flagged = false;
        let precision = if predicted == 0 {
            flagged = true;
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        let recall = if support == 0 {
            flagged = true;
            0.0
        } else {
            tp as f64 / support as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        if flagged {
            degenerate.push(classes[c].clone());
        }
        per_class.push(ClassMetrics {
            class: classes[c].clone(),
            precision,
            recall,
            f1,
            support,
        });
    }

    let trace: usize = (0..k).map(|c| confusion[c][c]).sum();
    let mean = |f: fn(&ClassMetrics) -> f64| -> f64 {
        per_class.iter().map(f).sum::<f64>() / k as f64
    };
    Ok(MetricsReport {
        classes: classes.to_vec(),
        confusion,
        accuracy: trace as f64 / total as f64,
        precision_macro: mean(|m| m.precision),
        recall_macro: mean(|m| m.recall),
        f1_macro: mean(|m| m.f1),
        per_class,
        degenerate_classes: degenerate,
        n: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn pairs(list: &[(&str, &str)]) -> Vec<(String, String)> {
        list.iter()
            .map(|(t, p)| (t.to_string(), p.to_string()))
            .collect()
    }

    #[test]
    fn all_correct() {
        let p = pairs(&[("a", "a"), ("b", "b"), ("a", "a")]);
        let report = compute_metrics(&p, &classes(&["a", "b"])).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.f1_macro, 1.0);
        for m in &report.per_class {
            assert_eq!(m.f1, 1.0);
        }
    }

    #[test]
    fn hand_computed_binary_confusion() {
        // TP=2 FP=1 FN=1 TN=6 for the positive class.
        let mut p = Vec::new();
        p.extend(pairs(&[("pos", "pos"), ("pos", "pos"), ("pos", "neg")]));
        p.extend(pairs(&[("neg", "pos")]));
        p.extend(std::iter::repeat(("neg".to_string(), "neg".to_string())).take(6));
        let report = compute_metrics(&p, &classes(&["pos", "neg"])).unwrap();
        let pos = report.class_metrics("pos").unwrap();
        assert!((pos.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((pos.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((pos.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.n, 10);
    }

    #[test]
    fn constant_predictor_recalls() {
        let p = pairs(&[("a", "a"), ("a", "a"), ("b", "a"), ("b", "a")]);
        let report = compute_metrics(&p, &classes(&["a", "b"])).unwrap();
        assert_eq!(report.class_metrics("a").unwrap().recall, 1.0);
        assert_eq!(report.class_metrics("b").unwrap().recall, 0.0);
        // "b" was never predicted → degenerate precision.
        assert!(report.degenerate_classes.contains(&"b".to_string()));
    }

    #[test]
    fn accuracy_equals_trace_over_total() {
        let p = pairs(&[("a", "b"), ("b", "b"), ("a", "a"), ("b", "a"), ("a", "a")]);
        let report = compute_metrics(&p, &classes(&["a", "b"])).unwrap();
        let trace: usize = (0..2).map(|c| report.confusion[c][c]).sum();
        assert_eq!(report.accuracy, trace as f64 / report.n as f64);
        // Row sums equal per-class support.
        for (c, row) in report.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), report.per_class[c].support);
        }
    }

    #[test]
    fn macro_f1_is_unweighted_mean() {
        let p = pairs(&[("a", "a"), ("a", "b"), ("b", "b"), ("c", "b"), ("c", "c")]);
        let report = compute_metrics(&p, &classes(&["a", "b", "c"])).unwrap();
        let mean: f64 = report.per_class.iter().map(|m| m.f1).sum::<f64>() / 3.0;
        assert!((report.f1_macro - mean).abs() < 1e-12);
    }

    #[test]
    fn unknown_label_rejected() {
        let p = pairs(&[("a", "zz")]);
        assert_eq!(
            compute_metrics(&p, &classes(&["a", "b"])).unwrap_err(),
            EvalError::UnknownLabel("zz".to_string())
        );
    }

    #[test]
    fn empty_rejected() {
        assert_eq!(
            compute_metrics(&[], &classes(&["a"])).unwrap_err(),
            EvalError::EmptyPredictions
        );
    }
}
