use nalgebra::{DMatrix, Rotation3, Unit};
use proptest::prelude::*;
use streamgcn_core::io::{
    parse_skeleton, parse_streams, read_scores, write_scores, write_skeleton, write_streams,
    KeyValueConfig, SkeletonFile, StreamsFile,
};
use streamgcn_core::kinematics::{Vec3, VectorSeries};
use streamgcn_core::model::{
    read_checkpoint, write_checkpoint, InputNorm, Model, NetworkConfig, ParamSet, StreamGcn,
};
use streamgcn_core::objectives::{categorical_kl, gaussian_kl, softmax};
use streamgcn_core::train::{ensemble, ScoreRow};
use streamgcn_core::{build_stream_set, GraphFilter, MotionSequence, SkeletonTopology, StreamKind};

fn tree() -> impl Strategy<Value = SkeletonTopology> {
    (1usize..12)
        .prop_flat_map(|n| proptest::collection::vec(any::<proptest::sample::Index>(), n))
        .prop_map(|idx| {
            let parents = idx
                .iter()
                .enumerate()
                .map(|(j, i)| (j > 0).then(|| i.index(j)))
                .collect();
            SkeletonTopology::from_parents(parents).unwrap()
        })
}

fn sequence(joints: usize, frames: usize) -> impl Strategy<Value = MotionSequence> {
    proptest::collection::vec(-2.0f64..2.0, joints * frames * 3).prop_map(move |v| {
        let data = v.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        MotionSequence::new(
            VectorSeries::from_vec(frames, joints, data).unwrap(),
            Some(1),
        )
        .unwrap()
    })
}

fn tree_and_sequence() -> impl Strategy<Value = (SkeletonTopology, MotionSequence)> {
    (tree(), 3usize..10).prop_flat_map(|(t, m)| {
        let n = t.num_joints();
        (Just(t), sequence(n, m))
    })
}

fn map_points(seq: &MotionSequence, f: impl Fn(Vec3) -> Vec3) -> MotionSequence {
    let c = seq.coords();
    let data = c.as_slice().iter().map(|&v| f(v)).collect();
    MotionSequence::new(
        VectorSeries::from_vec(c.frames(), c.joints(), data).unwrap(),
        seq.label(),
    )
    .unwrap()
}

fn max_diff(a: &VectorSeries, b: &VectorSeries) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_is_symmetric_with_unit_spectral_radius(t in tree()) {
        let f = GraphFilter::from_topology(&t).unwrap();
        let n = t.num_joints();
        let m = DMatrix::from_row_slice(n, n, f.filter());
        prop_assert_eq!(&m, &m.transpose());
        let radius = m.symmetric_eigen().eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!(radius <= 1.0 + 1e-9);
        for i in 0..n {
            prop_assert_eq!(f.self_looped()[i * n + i], 1.0);
        }
    }

    #[test]
    fn relabeling_permutes_the_filter(t in tree(), seed in any::<u64>()) {
        let n = t.num_joints();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = GraphFilter::from_topology(&t).unwrap();
        let b = GraphFilter::from_topology(&t.permuted(&perm).unwrap()).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(a.at(i, j), b.at(perm[i], perm[j]));
            }
        }
    }

    #[test]
    fn motion_streams_ignore_translation((t, seq) in tree_and_sequence(), shift in prop::array::uniform3(-5.0f64..5.0)) {
        let offset = Vec3::from(shift);
        let moved = map_points(&seq, |v| v + offset);
        let a = build_stream_set(&seq, &t).unwrap();
        let b = build_stream_set(&moved, &t).unwrap();
        for kind in StreamKind::ALL.into_iter().filter(|&k| k != StreamKind::Joint) {
            prop_assert!(max_diff(a.get(kind), b.get(kind)) < 1e-9, "{kind}");
        }
    }

    #[test]
    fn motion_streams_rotate_with_the_body(
        (t, seq) in tree_and_sequence(),
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in 0.0f64..6.0,
    ) {
        prop_assume!(Vec3::from(axis).norm() > 0.1);
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::from(axis)), angle);
        let turned = map_points(&seq, |v| r * v);
        let a = build_stream_set(&seq, &t).unwrap();
        let b = build_stream_set(&turned, &t).unwrap();
        for kind in StreamKind::ALL {
            let rotated = map_points(&MotionSequence::new(a.get(kind).clone(), None).unwrap(), |v| r * v);
            prop_assert!(max_diff(rotated.coords(), b.get(kind)) < 1e-7, "{kind}");
        }
    }

    #[test]
    fn softmax_and_kl_are_well_behaved(
        a in proptest::collection::vec(-50.0f64..50.0, 2..8),
        shift in -100.0f64..100.0,
    ) {
        let b: Vec<f64> = a.iter().rev().copied().collect();
        let p = softmax(&a);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = a.iter().map(|v| v + shift).collect();
        for (x, y) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert!(categorical_kl(&a, &b).unwrap() >= 0.0);
        prop_assert!(categorical_kl(&a, &a).unwrap().abs() < 1e-12);
        let lv: Vec<f64> = a.iter().map(|v| v / 10.0).collect();
        prop_assert!(gaussian_kl(&a, &lv).unwrap() >= 0.0);
    }

    #[test]
    fn ensemble_ignores_a_common_weight_scale(
        scores in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 9), 1..4),
        weights in proptest::collection::vec(0.1f64..3.0, 4),
        scale in 0.01f64..100.0,
    ) {
        // `scores[s]` holds three samples of three classes for stream `s`.
        let lists: Vec<Vec<ScoreRow>> = scores
            .iter()
            .map(|s| {
                (0..3)
                    .map(|i| ScoreRow { sample_id: format!("s{i}"), label: i, scores: s[i * 3..i * 3 + 3].to_vec() })
                    .collect()
            })
            .collect();
        let refs: Vec<&[ScoreRow]> = lists.iter().map(Vec::as_slice).collect();
        let w = &weights[..lists.len()];
        let scaled: Vec<f64> = w.iter().map(|v| v * scale).collect();
        let a = ensemble(&refs, w).unwrap();
        let b = ensemble(&refs, &scaled).unwrap();
        prop_assert_eq!(a.accuracy, b.accuracy);
        for (x, y) in a.rows.iter().zip(&b.rows) {
            for (u, v) in x.scores.iter().zip(&y.scores) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
        if lists.len() == 1 {
            prop_assert_eq!(a.accuracy, streamgcn_core::train::accuracy(&lists[0]).unwrap());
        }
    }

    #[test]
    fn skeleton_text_round_trips((t, seq) in tree_and_sequence()) {
        let file = SkeletonFile { topology: t, sequence: seq, class_names: vec!["a".into(), "b".into()] };
        let text = write_skeleton(&file);
        let back = parse_skeleton(&text).unwrap();
        prop_assert_eq!(&back, &file);
    }

    #[test]
    fn streams_round_trip_at_f32_precision((t, seq) in tree_and_sequence()) {
        let streams = build_stream_set(&seq, &t).unwrap();
        let file = StreamsFile { topology: t, label: Some(1), class_names: vec![], streams };
        let bytes = write_streams(&file);
        let back = parse_streams(&bytes).unwrap();
        prop_assert_eq!(write_streams(&back), bytes);
        for kind in StreamKind::ALL {
            prop_assert!(max_diff(back.streams.get(kind), file.streams.get(kind)) < 1e-5);
        }
    }

    #[test]
    fn skeleton_parser_survives_corruption((t, seq) in tree_and_sequence(), cut in any::<proptest::sample::Index>(), flips in proptest::collection::vec((any::<proptest::sample::Index>(), 0u8..8), 0..6)) {
        let file = SkeletonFile { topology: t, sequence: seq, class_names: vec![] };
        let text = write_skeleton(&file);
        let _ = parse_skeleton(&text[..cut.index(text.len() + 1)]);
        let mut bytes = text.into_bytes();
        for (i, bit) in &flips {
            let k = i.index(bytes.len());
            bytes[k] ^= 1 << bit;
        }
        let _ = parse_skeleton(&String::from_utf8_lossy(&bytes));
    }

    #[test]
    fn binary_parsers_survive_corruption(
        (t, seq) in tree_and_sequence(),
        cut in any::<proptest::sample::Index>(),
        flips in proptest::collection::vec((any::<proptest::sample::Index>(), 0u8..8), 1..6),
    ) {
        let streams = build_stream_set(&seq, &t).unwrap();
        let file = StreamsFile { topology: t.clone(), label: None, class_names: vec![], streams };
        let model = small_model(&t);
        for bytes in [write_streams(&file), write_checkpoint(&model)] {
            let _ = parse_streams(&bytes[..cut.index(bytes.len() + 1)]);
            let _ = read_checkpoint(&bytes[..cut.index(bytes.len() + 1)]);
            let mut corrupt = bytes.clone();
            for (i, bit) in &flips {
                let k = i.index(corrupt.len());
                corrupt[k] ^= 1 << bit;
            }
            let _ = parse_streams(&corrupt);
            let _ = read_checkpoint(&corrupt);
        }
    }

    #[test]
    fn text_parsers_never_panic(text in "\\PC{0,200}") {
        let _ = read_scores(&text);
        let _ = KeyValueConfig::parse(&text);
        let _ = streamgcn_core::io::read_metric_log(&text);
        let _ = parse_skeleton(&text);
        let _ = parse_streams(text.as_bytes());
        let _ = read_checkpoint(text.as_bytes());
    }
}

fn small_model(t: &SkeletonTopology) -> Model {
    let net = StreamGcn::new(NetworkConfig::with_blocks(t.num_joints(), 2, &[(6, 1)])).unwrap();
    let specs = net.specs().to_vec();
    let tensors = specs
        .iter()
        .map(|s| {
            let n: usize = s.shape.iter().product();
            streamgcn_core::autodiff::Tensor::new(
                s.shape.clone(),
                (0..n).map(|i| i as f32 * 0.01).collect(),
            )
            .unwrap()
        })
        .collect();
    let params = ParamSet::new(specs.iter().map(|s| s.name.clone()).collect(), tensors).unwrap();
    Model::new(
        net,
        params,
        t.clone(),
        StreamKind::Bone,
        InputNorm::identity(3),
    )
    .unwrap()
}

#[test]
fn score_csv_round_trips() {
    let rows = vec![
        ScoreRow {
            sample_id: "a".into(),
            label: 0,
            scores: vec![0.25, 0.75],
        },
        ScoreRow {
            sample_id: "b".into(),
            label: 1,
            scores: vec![1e-9, 1.0 - 1e-9],
        },
    ];
    assert_eq!(read_scores(&write_scores(&rows)).unwrap(), rows);
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let t = SkeletonTopology::ntu25();
    let model = small_model(&t);
    let bytes = write_checkpoint(&model);
    let back = read_checkpoint(&bytes).unwrap();
    assert_eq!(write_checkpoint(&back), bytes);
    assert_eq!(back.params.tensors(), model.params.tensors());
}
