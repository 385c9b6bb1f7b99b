//! Evaluation summaries shared by `train` and `eval`.

use std::fmt::Write as _;

use anyhow::{ensure, Result};
use hiros_core::dataset::{class_label, class_table, NUM_CLASSES};
use hiros_core::eval::{confusion, pooled_cv, prune_by_recall, ClassMetrics, ConfusionMatrix, FoldSummary};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct PruneReport {
    pub threshold: f64,
    pub removed: Vec<usize>,
    pub restricted_accuracy: f64,
    /// Per-fold accuracy over the retained classes.
    pub folds: Option<FoldSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub folds: Option<FoldSummary>,
    pub metrics: ClassMetrics,
    pub confusion: ConfusionMatrix,
    pub prune: Option<PruneReport>,
}

fn fold_accuracies(preds: &[usize], labels: &[usize], folds: &[usize], keep: impl Fn(usize) -> bool) -> Vec<f64> {
    let k = folds.iter().max().map_or(0, |m| m + 1);
    (0..k)
        .filter_map(|f| {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] == f && keep(labels[i])).collect();
            (!idx.is_empty()).then(|| idx.iter().filter(|&&i| preds[i] == labels[i]).count() as f64 / idx.len() as f64)
        })
        .collect()
}

fn summarize(accs: &[f64]) -> Option<FoldSummary> {
    (accs.len() >= 2).then(|| pooled_cv(accs).ok()).flatten()
}

/// Confusion, metrics and optional recall pruning over 27-class
/// predictions. `folds` gives each sample's fold for the "a±b%" summaries.
pub fn evaluate_predictions(
    preds: &[usize],
    labels: &[usize],
    folds: Option<&[usize]>,
    prune: Option<f64>,
) -> Result<EvalReport> {
    ensure!(folds.is_none_or(|f| f.len() == labels.len()), "one fold per sample required");
    let cm = confusion(preds, labels, NUM_CLASSES)?;
    let prune = match prune {
        Some(threshold) => {
            let r = prune_by_recall(&cm, &class_table(), threshold)?;
            let retained = |c: usize| r.retained.contains(&c);
            Some(PruneReport {
                threshold,
                restricted_accuracy: r.restricted_accuracy,
                folds: folds.and_then(|f| summarize(&fold_accuracies(preds, labels, f, retained))),
                removed: r.removed,
            })
        }
        None => None,
    };
    Ok(EvalReport {
        accuracy: cm.accuracy()?,
        folds: folds.and_then(|f| summarize(&fold_accuracies(preds, labels, f, |_| true))),
        metrics: cm.metrics(),
        confusion: cm,
        prune,
    })
}

/// Human-readable report: accuracy, per-class precision/recall and the
/// pruning outcome.
pub fn render(report: &EvalReport) -> String {
    let mut s = String::new();
    let cm = &report.confusion;
    let _ = writeln!(s, "samples: {}", cm.total());
    let _ = writeln!(s, "accuracy: {:.1}%", 100.0 * report.accuracy);
    if let Some(f) = &report.folds {
        let _ = writeln!(s, "per-fold accuracy: {f}");
    }
    let _ = writeln!(s, "{:<4} {:<22} {:>6} {:>9} {:>7}", "id", "class", "n", "precision", "recall");
    for c in 0..cm.num_classes() {
        let n = cm.row_sum(c);
        if n == 0 && cm.col_sum(c) == 0 {
            continue;
        }
        let _ = writeln!(
            s,
            "{c:<4} {:<22} {n:>6} {:>9.3} {:>7.3}",
            class_label(c).unwrap_or("?"),
            report.metrics.precision[c],
            report.metrics.recall[c]
        );
    }
    if let Some(p) = &report.prune {
        let removed: Vec<String> = p
            .removed
            .iter()
            .filter(|&&c| cm.row_sum(c) > 0)
            .map(|&c| format!("{c} {}", class_label(c).unwrap_or("?")))
            .collect();
        let _ = writeln!(s, "pruned below recall {}: {}", p.threshold, removed.join(", "));
        let _ = writeln!(s, "restricted accuracy: {:.1}%", 100.0 * p.restricted_accuracy);
        if let Some(f) = &p.folds {
            let _ = writeln!(s, "restricted per-fold accuracy: {f}");
        }
    }
    s
}

pub fn labels() -> Vec<&'static str> {
    (0..NUM_CLASSES).map(|c| class_label(c).unwrap_or("?")).collect()
}
