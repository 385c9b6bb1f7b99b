use std::collections::{BTreeMap, BTreeSet};

use hiros_core::dataset::*;
use proptest::prelude::*;

#[test]
fn class_table_matches_vocabulary() {
    let t = class_table();
    assert_eq!(t.len(), 27);
    assert_eq!(t[2].label, "Handwave");
    assert_eq!(t[25].label, "Doing nothing");
    assert_eq!(t[25].kind, ClassKind::Background);
    assert_eq!(t[26].label, "Doing something else");
}

#[test]
fn stage_two_counts_and_canonical_prototypes() {
    let spec = GenSpec {
        frames: 4,
        height: 8,
        width: 8,
        ..GenSpec::default()
    };
    let (clips, manifest) = generate(&spec).unwrap();
    assert_eq!(clips.len(), 10 * 5 * 27);
    assert_eq!(manifest.entries.len(), clips.len());
    for p in 0..10 {
        assert_eq!(prototype_assignment(&spec, p).unwrap(), (0..27).collect::<Vec<_>>());
    }
    let mut per_class: BTreeMap<(u32, u16), usize> = BTreeMap::new();
    for c in &clips {
        *per_class.entry((c.participant_id, c.class_id)).or_default() += 1;
        assert_eq!(c.stage, Stage::Demonstrated);
    }
    assert!(per_class.values().all(|&n| n == 5));
}

/// Fraction of participant pairs whose mapping for a fixed class agrees,
/// against the closed form 1/pool for independent uniform draws.
#[test]
fn stage_one_collision_rate_matches_pool_baseline() {
    let spec = GenSpec {
        stage: Stage::Uninstructed,
        seed: 42,
        ..GenSpec::default()
    };
    let mappings: Vec<Vec<usize>> = (0..100).map(|p| prototype_assignment(&spec, p).unwrap()).collect();
    let mut same = 0usize;
    let mut pairs = 0usize;
    for (a, ma) in mappings.iter().enumerate() {
        for mb in &mappings[a + 1..] {
            pairs += 27;
            same += ma.iter().zip(mb).filter(|(x, y)| x == y).count();
        }
    }
    let rate = same as f64 / pairs as f64;
    let expected = 1.0 / POOL_SIZE as f64;
    assert!((rate - expected).abs() <= 0.02, "collision rate {rate}, expected {expected}");
}

#[test]
fn stage_one_needs_a_large_enough_pool() {
    let spec = GenSpec {
        stage: Stage::Uninstructed,
        pool_size: 20,
        ..GenSpec::default()
    };
    assert!(matches!(generate(&spec), Err(DatasetError::Config(_))));
    let ok = GenSpec {
        classes: (0..20).collect(),
        participants: 1,
        clips_per_class_per_participant: 1,
        frames: 2,
        ..spec
    };
    assert!(generate(&ok).is_ok());
}

#[test]
fn determinism_and_codec_round_trip() {
    let spec = GenSpec {
        stage: Stage::Uninstructed,
        participants: 3,
        clips_per_class_per_participant: 1,
        classes: vec![0, 5, 25, 26],
        seed: 9,
        ..GenSpec::default()
    };
    let (a, _) = generate(&spec).unwrap();
    let (b, _) = generate(&spec).unwrap();
    assert_eq!(a, b);
    for clip in &a {
        let bytes = encode_clip(clip).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 16 * 32 * 32);
        assert_eq!(HEADER_LEN, 4 + 1 + 8 + 2 + 4 + 1 + 8);
        assert_eq!(&decode_clip(&bytes).unwrap(), clip);
    }
}

#[test]
fn folds_over_generated_data_are_participant_disjoint() {
    let spec = GenSpec {
        participants: 11,
        clips_per_class_per_participant: 1,
        classes: vec![0, 1],
        frames: 2,
        height: 4,
        width: 4,
        ..GenSpec::default()
    };
    let (_, m) = generate(&spec).unwrap();
    let folded = m.kfold(5, 7).unwrap();
    let mut members: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); 5];
    for e in &folded.entries {
        members[e.fold.unwrap()].insert(e.participant_id);
    }
    let mut sizes: Vec<usize> = members.iter().map(|s| s.len()).collect();
    sizes.sort_unstable();
    assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
    let union: BTreeSet<u32> = members.iter().flatten().copied().collect();
    assert_eq!(union.len(), 11);
    assert_eq!(members.iter().map(|s| s.len()).sum::<usize>(), 11);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn clip_codec_round_trips(t in 1usize..4, h in 1usize..6, w in 1usize..6, c in 1usize..4,
                              class_id in any::<u16>(), participant in any::<u32>(),
                              stage in 1u8..3, seed in any::<u64>(), fill in any::<u8>()) {
        let clip = Clip {
            frames: (0..t * h * w * c).map(|i| fill.wrapping_mul(i as u8)).collect(),
            dims: [t, h, w, c],
            class_id,
            participant_id: participant,
            stage: Stage::try_from(stage).unwrap(),
            variant_seed: seed,
        };
        let bytes = encode_clip(&clip).unwrap();
        prop_assert_eq!(decode_clip(&bytes).unwrap(), clip);
    }

    #[test]
    fn clip_decoder_survives_garbage(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_clip(&bytes);
        let _ = decode_frame(&bytes);
    }

    #[test]
    fn generated_clips_are_in_range(seed in any::<u64>(), stage in 1u8..3) {
        let spec = GenSpec {
            stage: Stage::try_from(stage).unwrap(),
            participants: 2,
            clips_per_class_per_participant: 1,
            classes: vec![3, 9, 25],
            frames: 4,
            seed,
            ..GenSpec::default()
        };
        let (clips, _) = generate(&spec).unwrap();
        for c in clips {
            prop_assert_eq!(c.frames.len(), 4 * 32 * 32);
            prop_assert_eq!(c.dims, [4, 32, 32, 1]);
        }
    }
}
