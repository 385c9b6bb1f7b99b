use hiros_core::dataset::{generate, Examples, GenSpec, Jitter};
use hiros_core::model::*;

fn small_config(classes: usize) -> ModelConfig {
    ModelConfig {
        frames: 8,
        height: 16,
        width: 16,
        channels: 1,
        block1: ConvBlock {
            filters: 4,
            kernel: [3, 3, 3],
            pool: [2, 2, 2],
        },
        block2: ConvBlock {
            filters: 4,
            kernel: [3, 3, 3],
            pool: [2, 2, 2],
        },
        lstm_hidden: 16,
        num_classes: classes,
        seed: 3,
    }
}

fn data(participants: u32) -> Examples {
    let spec = GenSpec {
        participants,
        clips_per_class_per_participant: 2,
        classes: vec![0, 1, 2],
        frames: 8,
        height: 16,
        width: 16,
        jitter: Jitter {
            noise_sigma: 2.0,
            ..Jitter::default()
        },
        ..GenSpec::default()
    };
    Examples::from_clips(&generate(&spec).unwrap().0).unwrap()
}

fn opts(epochs: usize) -> TrainOptions {
    TrainOptions {
        epochs,
        batch: 8,
        lr: 3e-3,
        seed: 5,
        track_validation: true,
    }
}

#[test]
fn cross_validation_partitions_and_learns_separable_data() {
    let d = data(5);
    let cv = cross_validate(&small_config(3), &d, 5, 11, &opts(25)).unwrap();
    assert_eq!(cv.predictions.len(), d.len());
    assert_eq!(cv.fold_accuracies.len(), 5);
    assert_eq!(cv.reports.len(), 5);
    // Each clip is tested exactly once, and only in its participant's fold.
    for fold in 0..5 {
        let members: Vec<u32> = d
            .groups()
            .iter()
            .zip(&cv.folds)
            .filter(|(_, &f)| f == fold)
            .map(|(g, _)| *g)
            .collect();
        assert!(!members.is_empty());
        assert!(members.iter().all(|&g| g == members[0]));
    }
    assert!(cv.pooled_accuracy() >= 0.9, "pooled accuracy {}", cv.pooled_accuracy());
    assert!(cv.reports.iter().all(|r| r.epochs_run == 25 && r.val_accuracy.len() == 25));
}

#[test]
fn seeded_training_is_deterministic() {
    let d = data(2);
    let a = cross_validate(&small_config(3), &d, 2, 4, &opts(2)).unwrap();
    let b = cross_validate(&small_config(3), &d, 2, 4, &opts(2)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn training_rejects_mismatched_inputs() {
    let d = data(2);
    let mut net = GestureNet::build(ModelConfig {
        frames: 4,
        ..small_config(3)
    })
    .unwrap();
    assert!(matches!(train_fold(&mut net, &d, None, &opts(1)), Err(ModelError::Input(_))));
    let mut narrow = GestureNet::build(small_config(2)).unwrap();
    assert!(matches!(train_fold(&mut narrow, &d, None, &opts(1)), Err(ModelError::Input(_))));
    assert!(cross_validate(&small_config(3), &d, 3, 0, &opts(1)).is_err());
}

#[test]
fn loss_decreases_on_a_fixed_batch() {
    let d = data(2);
    let mut net = GestureNet::build(small_config(3)).unwrap();
    let report = train_fold(&mut net, &d, None, &opts(8)).unwrap();
    assert!(report.val_accuracy.is_empty());
    assert!(report.train_loss.last().unwrap() < &report.train_loss[0]);
    let back = read_checkpoint(&write_checkpoint(&net)).unwrap();
    assert_eq!(evaluate(&back, &d).unwrap(), evaluate(&net, &d).unwrap());
}
