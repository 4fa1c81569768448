use std::collections::{BTreeMap, BTreeSet};

use super::t_iou;
use crate::corpus::SpanLabel;
use crate::error::Result;
use crate::postprocess::{rank_order, CandidateSpan};

/// Per-threshold mAP and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub per_threshold: Vec<(f64, f64)>,
    pub average: f64,
}

/// Area under the precision envelope for a ranked list of hit flags.
pub fn average_precision(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &h) in hits.iter().enumerate() {
        tp += usize::from(h);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // envelope: running max from the right
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    hits.iter()
        .zip(&precision)
        .filter(|(h, _)| **h)
        .map(|(_, p)| p / num_gt as f64)
        .sum()
}

/// Greedy matching in rank order: each prediction takes the unmatched
/// same-clip ground-truth span of highest tIoU at or above `threshold`.
fn ranked_hits(preds: &[(&str, CandidateSpan)], gts: &BTreeMap<&str, Vec<(f64, f64)>>, threshold: f64) -> Result<Vec<bool>> {
    let mut used: BTreeMap<&str, Vec<bool>> = gts.iter().map(|(k, v)| (*k, vec![false; v.len()])).collect();
    let mut hits = Vec::with_capacity(preds.len());
    for (clip, p) in preds {
        let mut best: Option<(usize, f64)> = None;
        if let (Some(spans), Some(taken)) = (gts.get(clip), used.get(clip)) {
            for (i, &g) in spans.iter().enumerate() {
                if taken[i] {
                    continue;
                }
                let iou = t_iou((p.start_s, p.end_s), g)?;
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((i, iou));
                }
            }
        }
        if let Some((i, _)) = best {
            used.get_mut(clip).expect("clip present")[i] = true;
        }
        hits.push(best.is_some());
    }
    Ok(hits)
}

/// Average mAP over `thresholds`. Categories are those with at least one
/// ground-truth span; predictions of any other category are false positives
/// that no category's AP can see, and are reported with a warning.
pub fn average_map(
    predictions: &BTreeMap<String, Vec<CandidateSpan>>,
    ground_truth: &BTreeMap<String, Vec<SpanLabel>>,
    thresholds: &[f64],
) -> Result<MapResult> {
    let categories: BTreeSet<usize> = ground_truth.values().flatten().map(|s| s.category).collect();
    let stray = predictions
        .values()
        .flatten()
        .filter(|p| !categories.contains(&p.category))
        .count();
    if stray > 0 {
        log::warn!("{stray} prediction(s) carry a category absent from the ground truth");
    }
    let mut per_threshold = Vec::with_capacity(thresholds.len());
    for &thr in thresholds {
        let mut sum = 0.0;
        for &cat in &categories {
            let gts: BTreeMap<&str, Vec<(f64, f64)>> = ground_truth
                .iter()
                .map(|(clip, spans)| {
                    let v = spans
                        .iter()
                        .filter(|s| s.category == cat)
                        .map(|s| (s.start_s, s.end_s))
                        .collect();
                    (clip.as_str(), v)
                })
                .collect();
            let num_gt = gts.values().map(Vec::len).sum();
            let mut preds: Vec<(&str, CandidateSpan)> = predictions
                .iter()
                .flat_map(|(clip, ps)| ps.iter().filter(|p| p.category == cat).map(move |p| (clip.as_str(), *p)))
                .collect();
            preds.sort_by(|a, b| rank_order(&a.1, &b.1).then(a.0.cmp(b.0)));
            let hits = ranked_hits(&preds, &gts, thr)?;
            sum += average_precision(&hits, num_gt);
        }
        let map = if categories.is_empty() { 0.0 } else { sum / categories.len() as f64 };
        per_threshold.push((thr, map));
    }
    let average = if per_threshold.is_empty() {
        0.0
    } else {
        per_threshold.iter().map(|(_, m)| m).sum::<f64>() / per_threshold.len() as f64
    };
    Ok(MapResult { per_threshold, average })
}
