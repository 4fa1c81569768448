//! From dense proposals to scored spans: decoding, per-category NMS, and
//! utterance / segment scores.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::error::{json_error, Error, Result};
use crate::features::FrameSpec;
use crate::metrics::t_iou;
use crate::model::{level_timestamps, DensePrediction};

/// Scores below this are dropped after soft suppression.
pub const SOFT_NMS_FLOOR: f64 = 1e-3;
/// Default evaluation grid, seconds.
pub const SEGMENT_GRID_S: f64 = 0.01;
// slack for grid arithmetic on decimal boundaries
const GRID_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSpan {
    pub start_s: f64,
    pub end_s: f64,
    pub category: usize,
    pub score: f64,
}

impl CandidateSpan {
    fn interval(&self) -> (f64, f64) {
        (self.start_s, self.end_s)
    }
}

/// Descending score, then earlier start, then lower category, then earlier end.
pub fn rank_order(a: &CandidateSpan, b: &CandidateSpan) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.start_s.total_cmp(&b.start_s))
        .then(a.category.cmp(&b.category))
        .then(a.end_s.total_cmp(&b.end_s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmsMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocessConfig {
    pub score_threshold: f64,
    pub nms_mode: NmsMode,
    pub nms_iou_threshold: f64,
    pub soft_nms_sigma: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.1,
            nms_mode: NmsMode::Hard,
            nms_iou_threshold: 0.5,
            soft_nms_sigma: 0.5,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.score_threshold) {
            return Err(Error::InvalidConfig("postprocess: score_threshold must lie in [0, 1)".into()));
        }
        if !(self.nms_iou_threshold > 0.0 && self.nms_iou_threshold < 1.0) {
            return Err(Error::InvalidConfig("postprocess: nms_iou_threshold must lie in (0, 1)".into()));
        }
        if !(self.soft_nms_sigma > 0.0) {
            return Err(Error::InvalidConfig("postprocess: soft_nms_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Span in seconds for a timestamp at frame `t` with distances in frames:
/// onset `t - d_s`, offset `t + d_e`, each mapped to its frame center.
pub fn decode_span(t: f64, d_s: f64, d_e: f64, spec: &FrameSpec) -> (f64, f64) {
    (spec.frame_center_s(t - d_s), spec.frame_center_s(t + d_e))
}

/// Every valid timestamp whose top sigmoid probability exceeds `score_threshold`
/// becomes a candidate, clamped to `[0, duration_s]`.
pub fn decode(pred: &DensePrediction, spec: &FrameSpec, duration_s: f64, score_threshold: f64) -> Vec<CandidateSpan> {
    let mut out = Vec::new();
    for level in &pred.levels {
        let stamps = level_timestamps(level.stride, level.len(), pred.frames);
        for (tau, &t) in stamps.iter().enumerate() {
            if !level.mask[tau] {
                continue;
            }
            let (category, score) = level
                .logits
                .row(tau)
                .iter()
                .map(|&z| sigmoid(z))
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, p)| if p > best.1 { (c, p) } else { best });
            if score <= score_threshold {
                continue;
            }
            let d = level.distances.row(tau);
            let (s, e) = decode_span(t as f64, d[0], d[1], spec);
            let (start_s, end_s) = (s.clamp(0.0, duration_s), e.clamp(0.0, duration_s));
            if end_s > start_s {
                out.push(CandidateSpan {
                    start_s,
                    end_s,
                    category,
                    score,
                });
            }
        }
    }
    out
}

fn overlap(a: &CandidateSpan, b: &CandidateSpan) -> f64 {
    t_iou(a.interval(), b.interval()).unwrap_or(0.0)
}

/// Per-category non-maximum suppression. Hard mode drops same-category
/// candidates overlapping a kept one at `tIoU >= iou_threshold`; soft mode
/// decays them by `exp(-tIoU^2 / sigma)` and drops scores below 1e-3.
pub fn nms(candidates: &[CandidateSpan], mode: NmsMode, iou_threshold: f64, sigma: f64) -> Vec<CandidateSpan> {
    let mut pool: Vec<CandidateSpan> = candidates.to_vec();
    pool.sort_by(rank_order);
    let mut kept: Vec<CandidateSpan> = Vec::with_capacity(pool.len());
    match mode {
        NmsMode::Hard => {
            for c in pool {
                let suppressed = kept
                    .iter()
                    .any(|k| k.category == c.category && overlap(k, &c) >= iou_threshold);
                if !suppressed {
                    kept.push(c);
                }
            }
        }
        NmsMode::Soft => {
            while !pool.is_empty() {
                let best = (0..pool.len())
                    .min_by(|&a, &b| rank_order(&pool[a], &pool[b]))
                    .expect("non-empty");
                let top = pool.swap_remove(best);
                for c in pool.iter_mut().filter(|c| c.category == top.category) {
                    let iou = overlap(&top, c);
                    c.score *= (-iou * iou / sigma).exp();
                }
                pool.retain(|c| c.score >= SOFT_NMS_FLOOR);
                kept.push(top);
            }
            kept.sort_by(rank_order);
        }
    }
    kept
}

/// Decode then suppress.
pub fn postprocess(pred: &DensePrediction, spec: &FrameSpec, duration_s: f64, cfg: &PostprocessConfig) -> Vec<CandidateSpan> {
    let raw = decode(pred, spec, duration_s, cfg.score_threshold);
    nms(&raw, cfg.nms_mode, cfg.nms_iou_threshold, cfg.soft_nms_sigma)
}

/// Highest candidate score, 0 when there are none.
pub fn utterance_score(candidates: &[CandidateSpan]) -> f64 {
    candidates.iter().map(|c| c.score).fold(0.0, f64::max)
}

/// Number of grid cells covering `duration_s`.
pub fn segment_count(duration_s: f64, grid_s: f64) -> usize {
    (duration_s / grid_s - GRID_EPS).ceil().max(0.0) as usize
}

/// Midpoint of grid cell `j`; shared with ground-truth rasterization so a
/// prediction equal to the truth rasterizes identically.
pub fn segment_midpoint(j: usize, grid_s: f64) -> f64 {
    (j as f64 + 0.5) * grid_s
}

/// Max score of the candidates covering each grid cell `[j g, (j+1) g)`,
/// a cell being covered when its midpoint lies in `[start, end)`.
pub fn segment_scores(candidates: &[CandidateSpan], duration_s: f64, grid_s: f64) -> Result<Vec<f64>> {
    if !(duration_s > 0.0 && grid_s > 0.0) {
        return Err(Error::invalid("segment scoring needs positive duration and grid"));
    }
    let n = segment_count(duration_s, grid_s);
    let mut out = vec![0.0f64; n];
    for c in candidates {
        // candidate cells, widened by one, then the exact midpoint test
        let first = (c.start_s / grid_s).floor().max(1.0) as usize - 1;
        let last = ((c.end_s / grid_s).ceil().max(0.0) as usize + 1).min(n);
        for (j, v) in out.iter_mut().enumerate().take(last).skip(first) {
            let mid = segment_midpoint(j, grid_s);
            if c.start_s <= mid && mid < c.end_s {
                *v = v.max(c.score);
            }
        }
    }
    Ok(out)
}

/// Per-clip prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipPrediction {
    pub clip_id: String,
    pub spans: Vec<CandidateSpan>,
}

pub fn write_prediction(pred: &ClipPrediction, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(pred).expect("prediction serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_prediction(path: impl AsRef<Path>) -> Result<ClipPrediction> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_error(&text, e))
}
