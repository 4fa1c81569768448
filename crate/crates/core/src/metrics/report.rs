use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{average_map, default_tiou_thresholds, eer, segment_metrics};
use crate::corpus::LabelFile;
use crate::error::{Error, Result};
use crate::postprocess::{segment_scores, utterance_score, ClipPrediction, SEGMENT_GRID_S};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub tiou_thresholds: Vec<f64>,
    pub f1_threshold: f64,
    pub segment_grid_s: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            tiou_thresholds: default_tiou_thresholds(),
            f1_threshold: 0.5,
            segment_grid_s: SEGMENT_GRID_S,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tiou_thresholds.is_empty() || self.tiou_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::InvalidConfig("metrics: tIoU thresholds must be non-empty and in (0, 1]".into()));
        }
        if !(self.segment_grid_s > 0.0) {
            return Err(Error::InvalidConfig("metrics: segment_grid_s must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub clips: usize,
    pub bonafide_clips: usize,
    pub spoofed_clips: usize,
    pub gt_spans: usize,
    pub predicted_spans: usize,
    pub segments: usize,
}

/// Evaluation summary. Rates are fractions in `[0, 1]`; an EER is `null`
/// when its scores cover only one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map_per_tiou: BTreeMap<String, f64>,
    pub avg_map: f64,
    pub utt_eer: Option<f64>,
    pub seg_eer: Option<f64>,
    pub seg_f1: f64,
    pub counts: EvalCounts,
}

impl EvalReport {
    /// Human-readable summary, rates as percentages.
    pub fn summary(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.2}%", 100.0 * x));
        let mut out = String::new();
        for (k, v) in &self.map_per_tiou {
            out.push_str(&format!("mAP@{k}: {:.2}%\n", 100.0 * v));
        }
        out.push_str(&format!("average mAP: {:.2}%\n", 100.0 * self.avg_map));
        out.push_str(&format!("utterance EER: {}\n", pct(self.utt_eer)));
        out.push_str(&format!("segment EER: {}\n", pct(self.seg_eer)));
        out.push_str(&format!("segment F1: {:.2}%\n", 100.0 * self.seg_f1));
        out.push_str(&format!(
            "clips: {} ({} bonafide, {} spoofed), gt spans: {}, predicted spans: {}\n",
            self.counts.clips,
            self.counts.bonafide_clips,
            self.counts.spoofed_clips,
            self.counts.gt_spans,
            self.counts.predicted_spans
        ));
        out
    }
}

/// Score predictions against ground truth. Every ground-truth clip is
/// evaluated; a clip without a prediction counts as predicting nothing.
pub fn evaluate(predictions: &[ClipPrediction], truth: &[LabelFile], cfg: &MetricsConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if truth.is_empty() {
        return Err(Error::invalid("no ground-truth clips to evaluate"));
    }
    let mut pred_map: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for p in predictions {
        if pred_map.insert(p.clip_id.clone(), p.spans.clone()).is_some() {
            return Err(Error::invalid(format!("duplicate prediction for clip `{}`", p.clip_id)));
        }
    }
    let gt_map: BTreeMap<String, Vec<_>> = truth.iter().map(|t| (t.clip_id.clone(), t.spans.clone())).collect();
    if gt_map.len() != truth.len() {
        return Err(Error::invalid("duplicate clip id in ground truth"));
    }
    for id in pred_map.keys().filter(|k| !gt_map.contains_key(*k)) {
        log::warn!("prediction for clip `{id}` has no ground truth; ignored");
    }
    pred_map.retain(|k, _| gt_map.contains_key(k));

    let map = average_map(&pred_map, &gt_map, &cfg.tiou_thresholds)?;
    let empty = Vec::new();
    let mut utt_scores = Vec::with_capacity(truth.len());
    let mut utt_labels = Vec::with_capacity(truth.len());
    let mut seg_inputs = Vec::with_capacity(truth.len());
    for t in truth {
        let spans = pred_map.get(&t.clip_id).unwrap_or(&empty);
        utt_scores.push(utterance_score(spans));
        utt_labels.push(!t.spans.is_empty());
        seg_inputs.push((
            segment_scores(spans, t.duration_s, cfg.segment_grid_s)?,
            t.spans.clone(),
            t.duration_s,
        ));
    }
    let both = utt_labels.iter().any(|&l| l) && utt_labels.iter().any(|&l| !l);
    let utt_eer = if both { Some(eer(&utt_scores, &utt_labels)?) } else { None };
    let seg = segment_metrics(&seg_inputs, cfg.segment_grid_s, cfg.f1_threshold)?;
    let spoofed = utt_labels.iter().filter(|&&l| l).count();
    Ok(EvalReport {
        map_per_tiou: map
            .per_threshold
            .iter()
            .map(|(t, m)| (format!("{t:.2}"), *m))
            .collect(),
        avg_map: map.average,
        utt_eer,
        seg_eer: seg.eer,
        seg_f1: seg.f1,
        counts: EvalCounts {
            clips: truth.len(),
            bonafide_clips: truth.len() - spoofed,
            spoofed_clips: spoofed,
            gt_spans: truth.iter().map(|t| t.spans.len()).sum(),
            predicted_spans: pred_map.values().map(Vec::len).sum(),
            segments: seg.segments,
        },
    })
}
