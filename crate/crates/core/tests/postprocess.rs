mod common;

use common::{cand, duration_for_frames, prediction_from_targets, random_spans};
use proptest::prelude::*;
use speechloc::autodiff::Tensor;
use speechloc::features::FrameSpec;
use speechloc::metrics::t_iou;
use speechloc::model::{DensePrediction, LevelPrediction, ModelConfig};
use speechloc::postprocess::*;
use speechloc::seeding::rng_from;
use speechloc::training::{assign_targets, PyramidGeometry};

fn arb_candidates() -> impl Strategy<Value = Vec<CandidateSpan>> {
    prop::collection::vec((0.0f64..5.0, 0.01f64..2.0, 0usize..3, 0.0f64..1.0), 0..25)
        .prop_map(|v| v.into_iter().map(|(s, l, c, p)| cand(s, s + l, c, p)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn hard_nms_keeps_a_separated_subset(cands in arb_candidates(), thr in 0.05f64..0.95) {
        let out = nms(&cands, NmsMode::Hard, thr, 0.5);
        for o in &out {
            prop_assert!(cands.contains(o));
        }
        for (i, a) in out.iter().enumerate() {
            for b in &out[i + 1..] {
                if a.category == b.category {
                    prop_assert!(t_iou((a.start_s, a.end_s), (b.start_s, b.end_s)).unwrap() < thr);
                }
            }
        }
        prop_assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
        // the top-scoring candidate always survives
        if let Some(top) = cands.iter().min_by(|a, b| rank_order(a, b)) {
            prop_assert_eq!(&out[0], top);
        }
    }

    #[test]
    fn soft_nms_only_lowers_scores(cands in arb_candidates(), sigma in 0.05f64..2.0) {
        let out = nms(&cands, NmsMode::Soft, 0.5, sigma);
        prop_assert!(out.len() <= cands.len());
        for o in &out {
            let src = cands.iter().find(|c| c.start_s == o.start_s && c.end_s == o.end_s && c.category == o.category);
            prop_assert!(src.is_some_and(|c| o.score <= c.score));
            prop_assert!(o.score >= SOFT_NMS_FLOOR);
        }
        prop_assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn categories_never_suppress_each_other(cands in arb_candidates()) {
        let out = nms(&cands, NmsMode::Hard, 0.5, 0.5);
        for c in 0..3 {
            let alone: Vec<CandidateSpan> = cands.iter().filter(|x| x.category == c).copied().collect();
            let want = nms(&alone, NmsMode::Hard, 0.5, 0.5);
            let got: Vec<CandidateSpan> = out.iter().filter(|x| x.category == c).copied().collect();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn segment_count_ignores_candidates(cands in arb_candidates(), duration in 0.05f64..8.0) {
        let a = segment_scores(&cands, duration, SEGMENT_GRID_S).unwrap();
        let b = segment_scores(&[], duration, SEGMENT_GRID_S).unwrap();
        prop_assert_eq!(a.len(), b.len());
        prop_assert_eq!(a.len(), segment_count(duration, SEGMENT_GRID_S));
        prop_assert!(b.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn nms_examples() {
    let one = [cand(0.1, 0.5, 0, 0.4)];
    assert_eq!(nms(&one, NmsMode::Hard, 0.5, 0.5), one);
    assert_eq!(nms(&one, NmsMode::Soft, 0.5, 0.5), one);
    // tIoU 0.8
    let pair = [cand(0.0, 1.0, 1, 0.7), cand(0.0, 0.8, 1, 0.9)];
    assert!((t_iou((0.0, 1.0), (0.0, 0.8)).unwrap() - 0.8).abs() < 1e-12);
    assert_eq!(nms(&pair, NmsMode::Hard, 0.5, 0.5), vec![pair[1]]);
    let disjoint = [cand(0.0, 1.0, 0, 0.7), cand(2.0, 3.0, 0, 0.9)];
    for mode in [NmsMode::Hard, NmsMode::Soft] {
        assert_eq!(nms(&disjoint, mode, 0.5, 0.5), vec![disjoint[1], disjoint[0]]);
    }
    let soft = nms(&pair, NmsMode::Soft, 0.5, 0.5);
    assert!((soft[1].score - 0.7 * (-0.64f64 / 0.5).exp()).abs() < 1e-12);
}

#[test]
fn utterance_and_segment_examples() {
    assert_eq!(utterance_score(&[]), 0.0);
    assert_eq!(utterance_score(&[cand(0.0, 1.0, 0, 0.3), cand(1.0, 2.0, 0, 0.8)]), 0.8);
    assert_eq!(utterance_score(&[cand(0.0, 1.0, 0, 0.55)]), 0.55);

    let s = segment_scores(&[cand(0.10, 0.20, 0, 0.9)], 0.30, 0.01).unwrap();
    assert_eq!(s.len(), 30);
    for (j, v) in s.iter().enumerate() {
        assert_eq!(*v, if (10..20).contains(&j) { 0.9 } else { 0.0 }, "segment {j}");
    }
    let s = segment_scores(&[cand(0.0, 0.2, 0, 0.4), cand(0.1, 0.3, 1, 0.7)], 0.3, 0.01).unwrap();
    assert!(s[10..20].iter().all(|&v| v == 0.7));
    assert!(s[..10].iter().all(|&v| v == 0.4));
    assert!(segment_scores(&[], 0.0, 0.01).is_err());
}

fn single_level(logits: Vec<f64>, distances: Vec<f64>, cats: usize) -> DensePrediction {
    let n = distances.len() / 2;
    DensePrediction {
        levels: vec![LevelPrediction {
            logits: Tensor::new(vec![n, cats], logits).unwrap(),
            distances: Tensor::new(vec![n, 2], distances).unwrap(),
            stride: 1,
            mask: vec![true; n],
        }],
        frames: n,
    }
}

#[test]
fn decode_threshold_and_span_arithmetic() {
    let spec = FrameSpec::default();
    // 20 timestamps; only t = 14 is confident
    let mut logits = vec![-8.0; 20 * 2];
    logits[14 * 2 + 1] = 3.0;
    let mut dist = vec![1.0; 40];
    dist[28] = 4.0;
    dist[29] = 6.0;
    let pred = single_level(logits, dist, 2);
    let out = decode(&pred, &spec, 5.0, 0.1);
    assert_eq!(out.len(), 1);
    let c = out[0];
    assert_eq!(c.category, 1);
    assert!((c.start_s - 0.2125).abs() < 1e-12 && (c.end_s - 0.4125).abs() < 1e-12);
    // exactly at threshold is excluded
    let p = 1.0 / (1.0 + (-3.0f64).exp());
    assert!(decode(&pred, &spec, 5.0, p).is_empty());
    assert_eq!(decode(&pred, &spec, 5.0, p - 1e-12).len(), 1);
    // clamping to the clip
    let clamped = decode(&pred, &spec, 0.3, 0.1);
    assert_eq!(clamped[0].end_s, 0.3);
    // all below threshold
    let quiet = single_level(vec![-8.0; 40], vec![1.0; 40], 2);
    assert!(decode(&quiet, &spec, 5.0, 0.1).is_empty());
}

#[test]
fn decode_inverts_target_assignment() {
    let spec = FrameSpec::default();
    let cfg = ModelConfig::default();
    let mut rng = rng_from(11);
    for _ in 0..100 {
        let frames = rand::Rng::random_range(&mut rng, 100..300);
        let duration = duration_for_frames(frames, &spec);
        let spans = random_spans(&mut rng, duration, 4, (0.1, 2.0), 3);
        let geometry = PyramidGeometry::new(frames, cfg.num_levels).unwrap();
        let a = assign_targets(&geometry, &spans, &spec, &cfg.level_ranges(), 3).unwrap();
        let strides: Vec<usize> = geometry.levels.iter().map(|l| l.0).collect();
        let pred = prediction_from_targets(&a, &strides, frames, 3);
        let out = decode(&pred, &spec, duration, 0.5);
        assert_eq!(out.len(), a.num_positive);
        for gt in &spans {
            assert!(out.iter().any(|c| c.category == gt.category
                && (c.start_s - gt.start_s).abs() < 1e-9
                && (c.end_s - gt.end_s).abs() < 1e-9));
        }
    }
}

#[test]
fn prediction_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let pred = ClipPrediction {
        clip_id: "clip_00003".into(),
        spans: vec![cand(0.25, 0.75, 2, 0.875)],
    };
    let path = dir.path().join("p.json");
    write_prediction(&pred, &path).unwrap();
    assert_eq!(read_prediction(&path).unwrap(), pred);
    let text = std::fs::read_to_string(&path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["spans"][0]["category"], 2);
}
