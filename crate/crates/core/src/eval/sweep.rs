use serde::{Deserialize, Serialize};

use super::{confusion, pooled_cv, EvalError, FoldSummary, Result};
use crate::dataset::{generate, Examples, GenSpec, Stage};
use crate::model::{cross_validate, CvResult, ModelConfig, TrainOptions};

/// Dataset-size sweep over one or more collection stages. `sizes` count
/// clips per gesture and must be divisible by `base.participants`; every
/// other generation parameter comes from `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub stages: Vec<Stage>,
    pub folds: usize,
    pub split_seed: u64,
    pub base: GenSpec,
    pub model: ModelConfig,
    pub train: TrainOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub stage: Stage,
    pub pooled_accuracy: f64,
    pub summary: FoldSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub cells: Vec<SweepCell>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepReport {
    pub stages: Vec<Stage>,
    pub rows: Vec<SweepRow>,
}

fn stage_name(s: Stage) -> String {
    format!("stage{}", s as u8)
}

impl SweepReport {
    pub fn cell(&self, size: usize, stage: Stage) -> Option<&SweepCell> {
        self.rows
            .iter()
            .find(|r| r.size == size)?
            .cells
            .iter()
            .find(|c| c.stage == stage)
    }

    /// `size,stage1,stage2` with `a±b%` cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("size");
        for &s in &self.stages {
            out.push(',');
            out.push_str(&stage_name(s));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.size.to_string());
            for c in &row.cells {
                out.push(',');
                out.push_str(&c.summary.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:>8}", "size");
        for &s in &self.stages {
            out.push_str(&format!("  {:>12}", stage_name(s)));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{:>8}", row.size));
            for c in &row.cells {
                out.push_str(&format!("  {:>12}", c.summary.to_string()));
            }
            out.push('\n');
        }
        out
    }
}

/// Runs one cross-validation for every (size, stage) pair. `on_run` sees
/// each raw result as it completes.
pub fn size_sweep(config: &SweepConfig, mut on_run: impl FnMut(usize, Stage, &CvResult)) -> Result<SweepReport> {
    let participants = config.base.participants as usize;
    if let Some(&bad) = config.sizes.iter().find(|&&s| s == 0 || s % participants != 0) {
        return Err(EvalError::Input(format!(
            "size {bad} is not a positive multiple of {participants} participants"
        )));
    }
    let mut report = SweepReport {
        stages: config.stages.clone(),
        rows: Vec::with_capacity(config.sizes.len()),
    };
    for &size in &config.sizes {
        let mut cells = Vec::with_capacity(config.stages.len());
        for &stage in &config.stages {
            let spec = GenSpec {
                stage,
                clips_per_class_per_participant: size / participants,
                ..config.base.clone()
            };
            let (clips, _) = generate(&spec)?;
            let data = Examples::from_clips(&clips)?;
            let cv = cross_validate(&config.model, &data, config.folds, config.split_seed, &config.train)?;
            let cm = confusion(&cv.predictions, &cv.labels, config.model.num_classes)?;
            cells.push(SweepCell {
                stage,
                pooled_accuracy: cm.accuracy()?,
                summary: pooled_cv(&cv.fold_accuracies)?,
            });
            on_run(size, stage, &cv);
        }
        report.rows.push(SweepRow { size, cells });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(sizes: Vec<usize>) -> SweepConfig {
        SweepConfig {
            sizes,
            stages: vec![Stage::Uninstructed, Stage::Demonstrated],
            folds: 2,
            split_seed: 0,
            base: GenSpec {
                participants: 2,
                classes: vec![0, 1],
                frames: 2,
                height: 8,
                width: 8,
                ..GenSpec::default()
            },
            model: ModelConfig::default(),
            train: TrainOptions::default(),
        }
    }

    #[test]
    fn empty_sweep_trains_nothing() {
        let mut runs = 0;
        let r = size_sweep(&config(vec![]), |_, _, _| runs += 1).unwrap();
        assert!(r.rows.is_empty());
        assert_eq!(runs, 0);
        assert_eq!(r.to_csv(), "size,stage1,stage2\n");
    }

    #[test]
    fn indivisible_size_rejected() {
        assert!(matches!(size_sweep(&config(vec![3]), |_, _, _| {}), Err(EvalError::Input(_))));
    }
}
