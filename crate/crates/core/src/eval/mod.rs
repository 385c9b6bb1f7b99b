//! Confusion matrices, per-class metrics, fold summaries and recall-based
//! class pruning.

mod sweep;

pub use sweep::{size_sweep, SweepCell, SweepConfig, SweepReport, SweepRow};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::GestureClass;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("{0}")]
    Result(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(EvalError::Input(format!("{} counts for a {k}x{k} matrix", counts.len())));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.k..(truth + 1) * self.k]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.row(truth).iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, pred)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => Err(EvalError::Input("accuracy of an empty confusion matrix".into())),
            n => Ok(self.trace() as f64 / n as f64),
        }
    }

    pub fn metrics(&self) -> ClassMetrics {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        ClassMetrics {
            recall: (0..self.k).map(|i| ratio(self.get(i, i), self.row_sum(i))).collect(),
            precision: (0..self.k).map(|j| ratio(self.get(j, j), self.col_sum(j))).collect(),
        }
    }

    /// Header row `true\pred,<labels…>`, then one row per true class.
    pub fn to_csv(&self, labels: &[&str]) -> String {
        let label = |i: usize| labels.get(i).map(|s| s.to_string()).unwrap_or_else(|| i.to_string());
        let quote = |s: String| if s.contains([',', '"']) { format!("\"{}\"", s.replace('"', "\"\"")) } else { s };
        let mut out = String::from("true\\pred");
        for j in 0..self.k {
            out.push(',');
            out.push_str(&quote(label(j)));
        }
        out.push('\n');
        for i in 0..self.k {
            out.push_str(&quote(label(i)));
            for c in self.row(i) {
                out.push(',');
                out.push_str(&c.to_string());
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(EvalError::Input(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= k || l >= k {
            return Err(EvalError::Input(format!("class pair ({l}, {p}) outside 0..{k}")));
        }
        cm.counts[l * k + p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

/// Mean and sample standard deviation of fold accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub mean: f64,
    pub std: f64,
    pub folds: Vec<f64>,
}

pub fn pooled_cv(fold_accuracies: &[f64]) -> Result<FoldSummary> {
    let n = fold_accuracies.len();
    if n == 0 {
        return Err(EvalError::Input("no fold accuracies".into()));
    }
    let mean = fold_accuracies.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (fold_accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(FoldSummary {
        mean,
        std,
        folds: fold_accuracies.to_vec(),
    })
}

impl fmt::Display for FoldSummary {
    /// Percentages with one decimal, e.g. `84.1±2.4%`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}±{:.1}%", self.mean * 100.0, self.std * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneResult {
    pub retained: Vec<usize>,
    pub removed: Vec<usize>,
    /// Accuracy over test rows of retained classes, predictions still over
    /// the full label space.
    pub restricted_accuracy: f64,
}

/// Drops command classes whose recall is below `threshold`. Background
/// classes are always kept. `classes` describes the matrix's classes by
/// index.
pub fn prune_by_recall(cm: &ConfusionMatrix, classes: &[GestureClass], threshold: f64) -> Result<PruneResult> {
    if classes.len() < cm.num_classes() {
        return Err(EvalError::Input(format!(
            "class table has {} entries for a {}-class matrix",
            classes.len(),
            cm.num_classes()
        )));
    }
    let recall = cm.metrics().recall;
    let (retained, removed): (Vec<usize>, Vec<usize>) =
        (0..cm.num_classes()).partition(|&i| classes[i].is_background() || recall[i] >= threshold);
    if retained.is_empty() {
        return Err(EvalError::Result(format!("every class has recall below {threshold}")));
    }
    let rows: u64 = retained.iter().map(|&i| cm.row_sum(i)).sum();
    if rows == 0 {
        return Err(EvalError::Result("retained classes have no test samples".into()));
    }
    let hits: u64 = retained.iter().map(|&i| cm.get(i, i)).sum();
    Ok(PruneResult {
        retained,
        removed,
        restricted_accuracy: hits as f64 / rows as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::class_table;

    #[test]
    fn hand_tally() {
        let labels = [0, 0, 0, 1, 1, 2];
        let preds = [0, 0, 1, 1, 2, 2];
        let cm = confusion(&preds, &labels, 3).unwrap();
        assert_eq!(cm.row(0), &[2, 1, 0]);
        assert_eq!(cm.row(1), &[0, 1, 1]);
        assert_eq!(cm.row(2), &[0, 0, 1]);
        assert_eq!(cm.accuracy().unwrap(), 4.0 / 6.0);
        let m = cm.metrics();
        assert_eq!(m.recall, vec![2.0 / 3.0, 0.5, 1.0]);
        assert_eq!(m.precision, vec![1.0, 0.5, 0.5]);
        assert!(confusion(&[0], &[0, 1], 3).is_err());
        assert!(confusion(&[3], &[0], 3).is_err());
    }

    #[test]
    fn empty_rows_and_matrices() {
        let cm = confusion(&[0, 0], &[0, 0], 2).unwrap();
        assert_eq!(cm.metrics().recall, vec![1.0, 0.0]);
        assert_eq!(cm.metrics().precision, vec![1.0, 0.0]);
        assert!(ConfusionMatrix::zeros(2).accuracy().is_err());
    }

    #[test]
    fn fold_summary_format() {
        assert_eq!(pooled_cv(&[0.8; 5]).unwrap().to_string(), "80.0±0.0%");
        let s = pooled_cv(&[0.79, 0.81, 0.83, 0.85, 0.87]).unwrap();
        assert_eq!(s.to_string(), "83.0±3.2%");
        assert!((s.std - 0.001f64.sqrt()).abs() < 1e-12);
        assert!(pooled_cv(&[]).is_err());
    }

    #[test]
    fn pruning_keeps_background() {
        let table = class_table();
        // Class 25 (background) has recall 0, class 1 has 1/2.
        let cm = confusion(&[0, 0, 1, 0, 0], &[0, 0, 1, 1, 25], 27).unwrap();
        let r = prune_by_recall(&cm, &table, 0.85).unwrap();
        assert!(r.retained.contains(&25) && r.retained.contains(&26));
        assert!(r.removed.contains(&1));
        assert!(!r.removed.contains(&0));
        // Rows kept: class 0 (2 hits), 25 (0 hits); empty command rows have recall 0 and go.
        assert_eq!(r.restricted_accuracy, 2.0 / 3.0);
    }

    #[test]
    fn csv_export() {
        let cm = confusion(&[1, 0], &[0, 1], 2).unwrap();
        assert_eq!(cm.to_csv(&["A", "b,c"]), "true\\pred,A,\"b,c\"\nA,0,1\n\"b,c\",1,0\n");
        let json = serde_json::to_string(&cm).unwrap();
        assert_eq!(serde_json::from_str::<ConfusionMatrix>(&json).unwrap(), cm);
    }
}
