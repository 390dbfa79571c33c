//! Confusion matrix and the accuracy / precision / recall / F1 suite.
//!
//! Per-class metrics are one-vs-rest; undefined ratios (zero denominators)
//! are reported as 0 so degenerate predictors still produce comparable
//! numbers. Aggregates are unweighted (macro) means over classes, and that
//! convention is named explicitly in every emitted report.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

/// Rows are true classes, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> ConfusionMatrix {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn record(&mut self, true_class: usize, predicted: usize) {
        assert!(true_class < self.classes && predicted < self.classes);
        self.counts[true_class * self.classes + predicted] += 1;
    }

    pub fn get(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    /// Exact merge: confusion counts are additive across workers.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> ConfusionMatrix {
        assert_eq!(counts.len(), classes * classes);
        ConfusionMatrix { classes, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted means over classes.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub averaging: String,
    pub confusion: ConfusionMatrix,
    pub samples: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Derives the full metric suite from a confusion matrix. Per class k:
/// TP = cm[k,k], FP = column k minus TP, FN = row k minus TP;
/// precision = TP/(TP+FP), recall = TP/(TP+FN),
/// F1 = 2*P*R/(P+R); a zero denominator yields 0.
pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(TrainError::EmptyMatrix);
    }
    let k = cm.classes;
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.get(c, c);
        let col: u64 = (0..k).map(|r| cm.get(r, c)).sum();
        let row: u64 = (0..k).map(|p| cm.get(c, p)).sum();
        let precision = ratio(tp, col);
        let recall = ratio(tp, row);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
        });
    }
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    Ok(MetricsReport {
        accuracy: cm.trace() as f64 / total as f64,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        averaging: "macro".to_string(),
        per_class,
        confusion: cm.clone(),
        samples: total,
    })
}
