use crate::corpus::SpanLabel;
use crate::error::{Error, Result};
use crate::postprocess::{segment_count, segment_midpoint};

/// Equal error rate of detection scores; `labels[i]` is true for the positive
/// (spoofed) class and higher scores mean more likely positive.
///
/// Cuts run over every distinct score plus ±∞, classifying `score >= cut` as
/// positive. The rate is read at the first cut where the miss rate reaches the
/// false-alarm rate, interpolating linearly from the previous cut.
pub fn eer(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("eer: scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("eer: NaN score"));
    }
    let num_pos = labels.iter().filter(|&&l| l).count();
    let num_neg = labels.len() - num_pos;
    if num_pos == 0 || num_neg == 0 {
        return Err(Error::invalid("eer needs both positive and negative labels"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // at cut -inf every item is called positive
    let (mut fpr, mut fnr) = (1.0, 0.0);
    let (mut neg_below, mut pos_below) = (0usize, 0usize);
    let mut i = 0;
    loop {
        // advance the cut past the next distinct score value (or to +inf)
        let (prev_fpr, prev_fnr) = (fpr, fnr);
        if i < order.len() {
            let v = scores[order[i]];
            while i < order.len() && scores[order[i]] == v {
                if labels[order[i]] {
                    pos_below += 1;
                } else {
                    neg_below += 1;
                }
                i += 1;
            }
        }
        // cut now sits at the next distinct value above everything counted
        fpr = (num_neg - neg_below) as f64 / num_neg as f64;
        fnr = pos_below as f64 / num_pos as f64;
        if fnr >= fpr {
            let (d0, d1) = (prev_fnr - prev_fpr, fnr - fpr);
            let a = -d0 / (d1 - d0);
            return Ok(prev_fpr + a * (fpr - prev_fpr));
        }
    }
}

/// Segment labels: cell `j` is positive when its midpoint lies in some span.
pub fn rasterize_spans(spans: &[SpanLabel], duration_s: f64, grid_s: f64) -> Vec<bool> {
    let n = segment_count(duration_s, grid_s);
    (0..n)
        .map(|j| {
            let mid = segment_midpoint(j, grid_s);
            spans.iter().any(|s| s.start_s <= mid && mid < s.end_s)
        })
        .collect()
}

/// `2 tp / (2 tp + fp + fn)`, 0 when there are no true positives.
pub fn f1_score(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentMetrics {
    /// `None` when the pooled segments hold a single class.
    pub eer: Option<f64>,
    pub f1: f64,
    pub segments: usize,
}

/// Pooled segment EER and F1. `clips` pairs each clip's segment scores with its
/// ground-truth spans and duration.
pub fn segment_metrics(clips: &[(Vec<f64>, Vec<SpanLabel>, f64)], grid_s: f64, f1_threshold: f64) -> Result<SegmentMetrics> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (k, (s, spans, duration)) in clips.iter().enumerate() {
        let truth = rasterize_spans(spans, *duration, grid_s);
        if truth.len() != s.len() {
            return Err(Error::invalid(format!(
                "clip {k}: {} segment scores for {} grid cells",
                s.len(),
                truth.len()
            )));
        }
        scores.extend_from_slice(s);
        labels.extend(truth);
    }
    if scores.is_empty() {
        return Err(Error::invalid("segment metrics need at least one segment"));
    }
    let both = labels.iter().any(|&l| l) && labels.iter().any(|&l| !l);
    Ok(SegmentMetrics {
        eer: if both { Some(eer(&scores, &labels)?) } else { None },
        f1: f1_score(&scores, &labels, f1_threshold),
        segments: scores.len(),
    })
}
