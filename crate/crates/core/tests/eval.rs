use hiros_core::dataset::class_table;
use hiros_core::eval::*;
use proptest::prelude::*;

fn pairs(k: usize, max: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    proptest::collection::vec((0..k, 0..k), 1..max).prop_map(|v| v.into_iter().unzip())
}

proptest! {
    #[test]
    fn confusion_matches_brute_force_tally((preds, labels) in pairs(27, 200)) {
        let cm = confusion(&preds, &labels, 27).unwrap();
        for i in 0..27 {
            for j in 0..27 {
                let n = preds.iter().zip(&labels).filter(|&(&p, &l)| l == i && p == j).count();
                prop_assert_eq!(cm.get(i, j), n as u64);
            }
            let row = labels.iter().filter(|&&l| l == i).count() as u64;
            prop_assert_eq!(cm.row_sum(i), row);
        }
        prop_assert_eq!(cm.total(), preds.len() as u64);
        let hits = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
        prop_assert_eq!(cm.accuracy().unwrap(), hits as f64 / preds.len() as f64);
        let m = cm.metrics();
        for i in 0..27 {
            // Count consistency: recall * row sum is the diagonal count.
            prop_assert!((m.recall[i] * cm.row_sum(i) as f64 - cm.get(i, i) as f64).abs() < 1e-9);
            prop_assert!((m.precision[i] * cm.col_sum(i) as f64 - cm.get(i, i) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_threshold_retains_everything((preds, labels) in pairs(27, 200)) {
        let cm = confusion(&preds, &labels, 27).unwrap();
        let r = prune_by_recall(&cm, &class_table(), 0.0).unwrap();
        prop_assert_eq!(r.retained.len(), 27);
        prop_assert!(r.removed.is_empty());
        prop_assert_eq!(r.restricted_accuracy, cm.accuracy().unwrap());
    }

    #[test]
    fn equal_counts_accuracy_is_mean_recall(off in proptest::collection::vec(0u64..5, 16), per in 20u64..40) {
        // Off-diagonal counts are free; the diagonal tops every row up to `per`.
        let k = 4;
        let mut counts = vec![0u64; k * k];
        for i in 0..k {
            for j in (0..k).filter(|&j| j != i) {
                counts[i * k + j] = off[i * k + j];
            }
            let row: u64 = counts[i * k..(i + 1) * k].iter().sum();
            counts[i * k + i] = per - row;
        }
        let cm = ConfusionMatrix::from_counts(k, counts).unwrap();
        let recall = cm.metrics().recall;
        let mean = recall.iter().sum::<f64>() / k as f64;
        prop_assert!((cm.accuracy().unwrap() - mean).abs() < 1e-12);
    }
}

#[test]
fn paper_recalls_are_pruned_background_kept() {
    // Classes 19 and 20 at recall 0.66 and 0.71 (100 clips each), every other
    // class perfect; class 25 deliberately poor but exempt.
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for class in 0..27usize {
        let hits = match class {
            19 => 66,
            20 => 71,
            25 => 10,
            _ => 100,
        };
        for i in 0..100 {
            labels.push(class);
            preds.push(if i < hits { class } else { (class + 1) % 27 });
        }
    }
    let cm = confusion(&preds, &labels, 27).unwrap();
    let m = cm.metrics();
    assert_eq!((m.recall[19], m.recall[20]), (0.66, 0.71));
    let r = prune_by_recall(&cm, &class_table(), 0.85).unwrap();
    assert_eq!(r.removed, vec![19, 20]);
    assert!(r.retained.contains(&25) && r.retained.contains(&26));
    let expected = (23.0 * 100.0 + 10.0 + 100.0) / 2500.0;
    assert!((r.restricted_accuracy - expected).abs() < 1e-12);
    assert!(r.restricted_accuracy >= cm.accuracy().unwrap());
}

#[test]
fn all_pruned_is_an_error() {
    let cm = confusion(&[1, 0], &[0, 1], 2).unwrap();
    assert!(matches!(prune_by_recall(&cm, &class_table(), 0.5), Err(EvalError::Result(_))));
}

#[test]
fn perfect_and_single_column_predictions() {
    let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let cm = confusion(&labels, &labels, 3).unwrap();
    assert_eq!(cm.accuracy().unwrap(), 1.0);
    assert_eq!(cm.trace(), 30);
    let cm = confusion(&[1; 30], &labels, 3).unwrap();
    assert_eq!((cm.col_sum(0), cm.col_sum(1), cm.col_sum(2)), (0, 30, 0));
    assert_eq!(cm.accuracy().unwrap(), 1.0 / 3.0);
}

#[test]
fn fold_summaries() {
    assert_eq!(pooled_cv(&[0.8; 5]).unwrap().to_string(), "80.0±0.0%");
    assert_eq!(pooled_cv(&[0.79, 0.81, 0.83, 0.85, 0.87]).unwrap().to_string(), "83.0±3.2%");
    let s = pooled_cv(&[0.841 - 0.024, 0.841 + 0.024]).unwrap();
    // Sample std of {a-d, a+d} is d*sqrt(2).
    assert!((s.std - 0.024 * 2f64.sqrt()).abs() < 1e-12);
    assert_eq!(
        FoldSummary {
            mean: 0.841,
            std: 0.024,
            folds: vec![]
        }
        .to_string(),
        "84.1±2.4%"
    );
}
