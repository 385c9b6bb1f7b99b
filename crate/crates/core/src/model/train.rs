use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GestureNet, ModelConfig, ModelError, Result};
use crate::dataset::{assign_folds, Examples};
use crate::tensor::{Adam, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    /// Evaluate the validation set after every epoch.
    pub track_validation: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 100,
            batch: 16,
            lr: 1e-3,
            seed: 0,
            track_validation: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    /// Empty when no validation set was tracked.
    pub val_accuracy: Vec<f64>,
    pub epochs_run: usize,
    /// First epoch (0-based) after which validation accuracy moves by less
    /// than half a point over five epochs. Diagnostic only.
    pub converged_epoch: Option<usize>,
}

fn converged_epoch(val: &[f64]) -> Option<usize> {
    const SPAN: usize = 5;
    if val.len() < SPAN {
        return None;
    }
    (0..=val.len() - SPAN).find(|&e| {
        let w = &val[e..e + SPAN];
        let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
        hi - lo < 0.005
    })
}

/// Accuracy of `net` on `data`.
pub fn evaluate(net: &GestureNet, data: &Examples) -> Result<(f64, Vec<usize>)> {
    if data.is_empty() {
        return Err(ModelError::Input("empty evaluation set".into()));
    }
    let preds = net.predict_probs(data.data(), 32)?.argmax_rows();
    let correct = preds.iter().zip(data.labels()).filter(|(p, l)| p == l).count();
    Ok((correct as f64 / data.len() as f64, preds))
}

/// Mini-batch Adam training with seeded per-epoch shuffling.
pub fn train_fold(
    net: &mut GestureNet,
    train: &Examples,
    val: Option<&Examples>,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(ModelError::Input("empty training set".into()));
    }
    if train.sample_shape() != net.config().clip_shape() {
        return Err(ModelError::Input(format!(
            "training clips {:?} do not match model input {:?}",
            train.sample_shape(),
            net.config().clip_shape()
        )));
    }
    let k = net.num_classes();
    if let Some(&bad) = train.labels().iter().find(|&&l| l >= k) {
        return Err(ModelError::Input(format!("label {bad} outside 0..{k}")));
    }
    let adam = Adam::new(opts.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport::default();
    let batch = opts.batch.max(1);

    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in order.chunks(batch) {
            let (x, labels) = train.batch(idx)?;
            let mut g = Graph::new();
            let xv = g.constant(x);
            let probs = net.forward_graph(&mut g, xv)?;
            let loss = g.cross_entropy(probs, &labels)?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(ModelError::NonFinite { epoch });
            }
            loss_sum += lv * idx.len() as f64;
            correct += g
                .value(probs)
                .argmax_rows()
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            g.backward(loss, net.params_mut())?;
            adam.step(net.params_mut());
        }
        report.train_loss.push(loss_sum / train.len() as f64);
        report.train_accuracy.push(correct as f64 / train.len() as f64);
        if opts.track_validation {
            if let Some(val) = val.filter(|v| !v.is_empty()) {
                report.val_accuracy.push(evaluate(net, val)?.0);
            }
        }
        report.epochs_run += 1;
        log::debug!(
            "epoch {epoch}: loss {:.4} train acc {:.3}",
            report.train_loss[epoch],
            report.train_accuracy[epoch]
        );
    }
    report.converged_epoch = converged_epoch(&report.val_accuracy);
    Ok(report)
}

/// Pooled output of a participant-disjoint k-fold run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Prediction for every clip, in dataset order.
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    /// Test fold of every clip.
    pub folds: Vec<usize>,
    pub fold_accuracies: Vec<f64>,
    pub reports: Vec<TrainReport>,
}

impl CvResult {
    pub fn pooled_accuracy(&self) -> f64 {
        let hits = self
            .predictions
            .iter()
            .zip(&self.labels)
            .filter(|(p, l)| p == l)
            .count();
        hits as f64 / self.labels.len() as f64
    }
}

fn fold_seed(base: u64, fold: usize) -> u64 {
    base ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains `k` fresh networks, each tested on one participant-disjoint fold.
/// Folds train in parallel.
pub fn cross_validate(
    config: &ModelConfig,
    data: &Examples,
    k: usize,
    split_seed: u64,
    opts: &TrainOptions,
) -> Result<CvResult> {
    let fold_of_participant = assign_folds(data.groups(), k, split_seed)
        .map_err(|e| ModelError::Input(e.to_string()))?;
    let folds: Vec<usize> = data.groups().iter().map(|p| fold_of_participant[p]).collect();

    // (test indices, predictions, report) per fold.
    type FoldRun = (Vec<usize>, Vec<usize>, TrainReport);
    let runs: Vec<Result<FoldRun>> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let test_idx: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == fold).collect();
            let train_idx: Vec<usize> = (0..data.len()).filter(|&i| folds[i] != fold).collect();
            let test = data.subset(&test_idx);
            let train = data.subset(&train_idx);
            let mut net = GestureNet::build(ModelConfig {
                seed: fold_seed(config.seed, fold),
                ..config.clone()
            })?;
            let fold_opts = TrainOptions {
                seed: fold_seed(opts.seed, fold),
                ..*opts
            };
            let report = train_fold(&mut net, &train, Some(&test), &fold_opts)?;
            let (_, preds) = evaluate(&net, &test)?;
            Ok((test_idx, preds, report))
        })
        .collect();

    let mut predictions = vec![usize::MAX; data.len()];
    let mut fold_accuracies = Vec::with_capacity(k);
    let mut reports = Vec::with_capacity(k);
    for run in runs {
        let (idx, preds, report) = run?;
        let hits = idx
            .iter()
            .zip(&preds)
            .filter(|(&i, &p)| data.labels()[i] == p)
            .count();
        fold_accuracies.push(hits as f64 / idx.len() as f64);
        for (i, p) in idx.into_iter().zip(preds) {
            predictions[i] = p;
        }
        reports.push(report);
    }
    debug_assert!(predictions.iter().all(|&p| p != usize::MAX));
    Ok(CvResult {
        predictions,
        labels: data.labels().to_vec(),
        folds,
        fold_accuracies,
        reports,
    })
}
