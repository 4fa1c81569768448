//! Brute-force reference implementations and random instance generators
//! shared by the integration tests. Deliberately naive: quadratic or
//! exponential where the library is clever.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use speechloc::autodiff::Tensor;
use speechloc::corpus::SpanLabel;
use speechloc::features::FrameSpec;
use speechloc::model::{DensePrediction, LevelPrediction};
use speechloc::postprocess::CandidateSpan;
use speechloc::training::TargetAssignment;

pub fn label(s: f64, e: f64, c: usize) -> SpanLabel {
    SpanLabel {
        start_s: s,
        end_s: e,
        category: c,
        category_name: format!("cat{c}"),
    }
}

pub fn cand(s: f64, e: f64, c: usize, score: f64) -> CandidateSpan {
    CandidateSpan {
        start_s: s,
        end_s: e,
        category: c,
        score,
    }
}

pub fn iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    inter / ((a.1 - a.0) + (b.1 - b.0) - inter)
}

/// Ranking key: higher score first, then earlier start, lower category, earlier end, clip id.
fn ranks_before(a: &(String, CandidateSpan), b: &(String, CandidateSpan)) -> bool {
    let ka = (-a.1.score, a.1.start_s, a.1.category, a.1.end_s);
    let kb = (-b.1.score, b.1.start_s, b.1.category, b.1.end_s);
    match ka.partial_cmp(&kb).unwrap() {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => a.0 < b.0,
    }
}

/// AP straight from the definition: every hit contributes 1/num_gt times the
/// best precision at any rank at or below it.
pub fn ap_quadratic(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let precision_at = |k: usize| hits[..=k].iter().filter(|&&h| h).count() as f64 / (k + 1) as f64;
    let mut total = 0.0;
    for k in 0..hits.len() {
        if hits[k] {
            let best = (k..hits.len()).map(precision_at).fold(0.0, f64::max);
            total += best / num_gt as f64;
        }
    }
    total
}

/// Enumerate every injective assignment of ranked predictions to same-clip
/// ground truth with tIoU >= thr (or no match) and keep the one whose
/// per-prediction tIoU vector is lexicographically largest: each prediction,
/// in rank order, holds the best span still available to it.
fn best_matching(preds: &[(String, (f64, f64))], gts: &[(String, (f64, f64))], thr: f64) -> Vec<bool> {
    fn search(
        k: usize,
        preds: &[(String, (f64, f64))],
        gts: &[(String, (f64, f64))],
        thr: f64,
        used: &mut Vec<bool>,
        current: &mut Vec<f64>,
        best: &mut Option<Vec<f64>>,
    ) {
        if k == preds.len() {
            let better = match best {
                None => true,
                Some(b) => (**current).partial_cmp(b.as_slice()) == Some(std::cmp::Ordering::Greater),
            };
            if better {
                *best = Some(current.clone());
            }
            return;
        }
        for g in 0..gts.len() {
            if used[g] || gts[g].0 != preds[k].0 {
                continue;
            }
            let v = iou(preds[k].1, gts[g].1);
            if v >= thr {
                used[g] = true;
                current.push(v);
                search(k + 1, preds, gts, thr, used, current, best);
                current.pop();
                used[g] = false;
            }
        }
        current.push(-1.0);
        search(k + 1, preds, gts, thr, used, current, best);
        current.pop();
    }
    let mut best = None;
    search(0, preds, gts, thr, &mut vec![false; gts.len()], &mut Vec::new(), &mut best);
    best.unwrap().into_iter().map(|v| v >= 0.0).collect()
}

/// Exhaustive average mAP.
pub fn average_map_oracle(
    preds: &BTreeMap<String, Vec<CandidateSpan>>,
    gts: &BTreeMap<String, Vec<SpanLabel>>,
    thresholds: &[f64],
) -> f64 {
    let mut cats: Vec<usize> = gts.values().flatten().map(|s| s.category).collect();
    cats.sort();
    cats.dedup();
    if cats.is_empty() || thresholds.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &thr in thresholds {
        let mut sum = 0.0;
        for &c in &cats {
            let mut ranked: Vec<(String, CandidateSpan)> = Vec::new();
            for (clip, ps) in preds {
                for p in ps.iter().filter(|p| p.category == c) {
                    // insertion sort by the ranking rule
                    let item = (clip.clone(), *p);
                    let at = ranked.iter().position(|r| ranks_before(&item, r)).unwrap_or(ranked.len());
                    ranked.insert(at, item);
                }
            }
            let truth: Vec<(String, (f64, f64))> = gts
                .iter()
                .flat_map(|(clip, ss)| {
                    ss.iter()
                        .filter(|s| s.category == c)
                        .map(move |s| (clip.clone(), (s.start_s, s.end_s)))
                })
                .collect();
            let pred_iv: Vec<(String, (f64, f64))> =
                ranked.iter().map(|(clip, p)| (clip.clone(), (p.start_s, p.end_s))).collect();
            let hits = best_matching(&pred_iv, &truth, thr);
            sum += ap_quadratic(&hits, truth.len());
        }
        total += sum / cats.len() as f64;
    }
    total / thresholds.len() as f64
}

/// EER as the point where the (FAR, FRR) polyline over ascending cuts crosses
/// the diagonal. Each rate is recounted from scratch at every cut.
pub fn eer_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.push(f64::NEG_INFINITY);
    cuts.push(f64::INFINITY);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let point = |cut: f64| {
        let fa = scores.iter().zip(labels).filter(|(s, l)| !**l && **s >= cut).count() as f64 / neg;
        let fr = scores.iter().zip(labels).filter(|(s, l)| **l && **s < cut).count() as f64 / pos;
        (fa, fr)
    };
    let mut prev = point(cuts[0]);
    for &cut in &cuts[1..] {
        let cur = point(cut);
        if cur.1 >= cur.0 {
            // intersect segment prev -> cur with fa = fr
            let gap0 = prev.0 - prev.1;
            let gap1 = cur.0 - cur.1;
            let a = gap0 / (gap0 - gap1);
            return prev.0 + a * (cur.0 - prev.0);
        }
        prev = cur;
    }
    unreachable!("at +inf every positive is rejected")
}

/// Segment labels by midpoint, F1 from the confusion matrix.
pub fn segment_oracle(clips: &[(Vec<f64>, Vec<SpanLabel>, f64)], grid: f64, thr: f64) -> (Option<f64>, f64) {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (s, spans, _) in clips {
        for (j, &v) in s.iter().enumerate() {
            let mid = (j as f64 + 0.5) * grid;
            scores.push(v);
            labels.push(spans.iter().any(|sp| sp.start_s <= mid && mid < sp.end_s));
        }
    }
    let mut cm = [[0usize; 2]; 2]; // [predicted][actual]
    for (&s, &l) in scores.iter().zip(&labels) {
        cm[usize::from(s >= thr)][usize::from(l)] += 1;
    }
    let (tp, fp, fn_) = (cm[1][1] as f64, cm[1][0] as f64, cm[0][1] as f64);
    let f1 = if tp == 0.0 {
        0.0
    } else {
        let (p, r) = (tp / (tp + fp), tp / (tp + fn_));
        2.0 * p * r / (p + r)
    };
    let both = labels.iter().any(|&l| l) && labels.iter().any(|&l| !l);
    (both.then(|| eer_oracle(&scores, &labels)), f1)
}

/// Random non-overlapping spans in `[0, duration]` with lengths in `len_range`.
pub fn random_spans<R: Rng>(rng: &mut R, duration: f64, max_spans: usize, len_range: (f64, f64), cats: usize) -> Vec<SpanLabel> {
    let mut spans: Vec<SpanLabel> = Vec::new();
    for _ in 0..max_spans {
        let len = rng.random_range(len_range.0..len_range.1);
        if len >= duration {
            continue;
        }
        let s = rng.random_range(0.0..duration - len);
        let e = s + len;
        if spans.iter().all(|o| e <= o.start_s || s >= o.end_s) {
            spans.push(label(s, e, rng.random_range(0..cats)));
        }
    }
    spans.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    spans
}

/// Dense prediction that states the assigned targets with full confidence.
pub fn prediction_from_targets(a: &TargetAssignment, strides: &[usize], frames: usize, cats: usize) -> DensePrediction {
    DensePrediction {
        levels: a
            .levels
            .iter()
            .zip(strides)
            .map(|(lt, &stride)| {
                let n = lt.positive.len();
                LevelPrediction {
                    logits: Tensor::new(
                        vec![n, cats],
                        lt.one_hot.iter().map(|&y| if y > 0.5 { 30.0 } else { -30.0 }).collect(),
                    )
                    .unwrap(),
                    distances: Tensor::new(vec![n, 2], lt.regression.iter().flat_map(|&(s, e)| [s, e]).collect()).unwrap(),
                    stride,
                    mask: vec![true; n],
                }
            })
            .collect(),
        frames,
    }
}

/// Clip duration whose frame count is exactly `frames` under `spec`.
pub fn duration_for_frames(frames: usize, spec: &FrameSpec) -> f64 {
    ((frames - 1) as f64 * spec.frame_shift_ms + spec.frame_length_ms) / 1000.0
}

/// Small detection instance: up to 5 clips, 4 truth spans and 8 predictions.
/// Predictions are mostly jittered copies of truth spans so matches happen;
/// scores come from a coarse set so ties occur.
pub fn random_map_instance<R: Rng>(
    rng: &mut R,
) -> (BTreeMap<String, Vec<CandidateSpan>>, BTreeMap<String, Vec<SpanLabel>>) {
    let clips = rng.random_range(1..=5);
    let mut gts = BTreeMap::new();
    for k in 0..clips {
        gts.insert(format!("c{k}"), Vec::new());
    }
    let num_gt = rng.random_range(1..=4);
    for _ in 0..num_gt {
        let clip = format!("c{}", rng.random_range(0..clips));
        let spans: &mut Vec<SpanLabel> = gts.get_mut(&clip).unwrap();
        let extra = random_spans(rng, 4.0, 1, (0.2, 1.5), 3);
        if let Some(s) = extra.into_iter().next() {
            if spans.iter().all(|o| s.end_s <= o.start_s || s.start_s >= o.end_s) {
                spans.push(s);
                spans.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
            }
        }
    }
    let all: Vec<(String, SpanLabel)> = gts
        .iter()
        .flat_map(|(c, ss)| ss.iter().map(move |s| (c.clone(), s.clone())))
        .collect();
    let mut preds: BTreeMap<String, Vec<CandidateSpan>> = BTreeMap::new();
    for _ in 0..rng.random_range(0..=8) {
        let score = rng.random_range(1..=6) as f64 / 6.0;
        let (clip, p) = if !all.is_empty() && rng.random_bool(0.7) {
            let (clip, g) = &all[rng.random_range(0..all.len())];
            let s = (g.start_s + rng.random_range(-0.3..0.3)).max(0.0);
            let e = (g.end_s + rng.random_range(-0.3..0.3)).max(s + 0.05);
            let c = if rng.random_bool(0.85) { g.category } else { rng.random_range(0..3) };
            (clip.clone(), cand(s, e, c, score))
        } else {
            let s = rng.random_range(0.0..3.5);
            let e = s + rng.random_range(0.05..1.5);
            (format!("c{}", rng.random_range(0..clips)), cand(s, e, rng.random_range(0..3), score))
        };
        preds.entry(clip).or_default().push(p);
    }
    (preds, gts)
}

/// Score/label pairs with both classes present and frequent score ties.
pub fn random_score_instance<R: Rng>(rng: &mut R) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=30);
    let levels = rng.random_range(2..=12);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    labels[0] = true;
    labels[1] = false;
    let bias = rng.random_range(0.0..0.6);
    let scores = labels
        .iter()
        .map(|&l| {
            let raw: f64 = rng.random_range(0.0..1.0) + if l { bias } else { 0.0 };
            (raw * levels as f64).floor() / levels as f64
        })
        .collect();
    (scores, labels)
}

/// A few clips of segment scores (coarse values) with their truth spans.
pub fn random_segment_instance<R: Rng>(rng: &mut R, grid: f64) -> Vec<(Vec<f64>, Vec<SpanLabel>, f64)> {
    (0..rng.random_range(1..=4))
        .map(|_| {
            let duration = rng.random_range(5..=60) as f64 * grid + rng.random_range(0.0..grid);
            let spans = random_spans(rng, duration, 3, (0.02, 0.3), 3);
            let n = (duration / grid - 1e-9).ceil() as usize;
            let scores = (0..n).map(|_| rng.random_range(0..=10) as f64 / 10.0).collect();
            (scores, spans, duration)
        })
        .collect()
}
