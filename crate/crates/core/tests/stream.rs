use hiros_core::dataset::is_background;
use hiros_core::model::{ConvBlock, GestureNet, ModelConfig};
use hiros_core::stream::*;
use proptest::prelude::*;

fn tiny_net(frames: usize) -> GestureNet {
    GestureNet::build(ModelConfig {
        frames,
        height: 4,
        width: 4,
        channels: 1,
        block1: ConvBlock {
            filters: 2,
            kernel: [3, 3, 3],
            pool: [1, 2, 2],
        },
        block2: ConvBlock {
            filters: 2,
            kernel: [1, 1, 1],
            pool: [1, 1, 1],
        },
        lstm_hidden: 3,
        num_classes: 27,
        seed: 1,
    })
    .unwrap()
}

#[test]
fn first_inference_at_frame_t_then_every_stride() {
    let mut r = Recognizer::new(tiny_net(4), SmootherConfig::default(), []).unwrap();
    let frame = vec![100u8; r.frame_len()];
    let mut hits = Vec::new();
    for n in 1..=12 {
        if let Some(p) = r.push_frame(&frame).unwrap() {
            assert_eq!(p.len(), 27);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            hits.push(n);
        }
    }
    assert_eq!(hits, vec![4, 8, 12]);
    assert!(matches!(r.push_frame(&[0u8; 3]), Err(StreamError::FrameSize { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn inference_count_formula(t in 1usize..6, stride in 1usize..6, extra in 0usize..30) {
        let config = SmootherConfig { stride, ..SmootherConfig::default() };
        let mut r = Recognizer::new(tiny_net(t), config, []).unwrap();
        let frame = vec![7u8; r.frame_len()];
        let n = t + extra;
        for _ in 0..n {
            r.push_frame(&frame).unwrap();
        }
        prop_assert_eq!(r.inferences(), ((n - t) / stride + 1) as u64);
    }

    #[test]
    fn events_are_spaced_and_never_background(
        rows in proptest::collection::vec((0usize..27, 0.3f64..1.0), 0..300),
        vote in 1usize..7,
        refractory in 0usize..10,
    ) {
        let config = SmootherConfig {
            vote_window: vote,
            refractory_windows: refractory,
            emit_threshold: 0.5,
            stride: 1,
        };
        let mut s = Smoother::new(config, []);
        let mut last: Option<u64> = None;
        let mut prev_window = None;
        for (i, (class, p)) in rows.into_iter().enumerate() {
            let mut probs = vec![(1.0 - p) / 26.0; 27];
            probs[class] = p;
            if let Some(e) = s.observe(&probs, i as u64) {
                prop_assert!(!is_background(e.class_id));
                prop_assert!((0.0..=1.0).contains(&e.prob));
                if let Some(l) = last {
                    prop_assert!(e.window - l >= refractory as u64);
                }
                if let Some(w) = prev_window {
                    prop_assert!(e.window > w);
                }
                prev_window = Some(e.window);
                last = Some(e.window);
            }
        }
    }
}

#[test]
fn smoother_is_deterministic() {
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|i| {
            let mut p = vec![0.001; 27];
            p[if i % 11 < 7 { 4 } else { 9 }] = 0.974;
            p
        })
        .collect();
    let run = || {
        let mut s = Smoother::new(SmootherConfig::default(), []);
        rows.iter()
            .enumerate()
            .filter_map(|(i, p)| s.observe(p, i as u64))
            .collect::<Vec<_>>()
    };
    let a = run();
    assert!(!a.is_empty());
    assert_eq!(a, run());
}

#[test]
fn prediction_event_wire_format() {
    let e = PredictionEvent {
        class_id: 24,
        label: "Move to the right".into(),
        prob: 0.5,
        window: 3,
        ts_ms: 1200,
    };
    assert_eq!(
        serde_json::to_string(&e).unwrap(),
        r#"{"class_id":24,"label":"Move to the right","prob":0.5,"window":3,"ts_ms":1200}"#
    );
}
