//! Evaluation: temporal IoU, average mAP over tIoU thresholds, utterance and
//! segment EER, and segment F1.

mod detection;
mod rates;
mod report;

pub use detection::{average_map, average_precision, MapResult};
pub use rates::{eer, f1_score, rasterize_spans, segment_metrics, SegmentMetrics};
pub use report::{evaluate, EvalCounts, EvalReport, MetricsConfig};

use crate::error::{Error, Result};

/// Temporal IoU `|a ∩ b| / |a ∪ b|` of two half-open intervals.
pub fn t_iou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    if !(a.0 < a.1 && b.0 < b.1) {
        return Err(Error::invalid(format!("degenerate interval in tIoU: {a:?}, {b:?}")));
    }
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    Ok(inter / union)
}

/// The thresholds 0.50, 0.55, ..., 0.95.
pub fn default_tiou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}
