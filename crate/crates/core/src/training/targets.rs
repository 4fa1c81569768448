use crate::corpus::{validate_spans, SpanLabel};
use crate::error::{Error, Result};
use crate::features::FrameSpec;
use crate::model::{level_lengths, level_stride, level_timestamps};

/// Level strides and lengths for a sequence of `frames` embedded frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PyramidGeometry {
    pub frames: usize,
    /// `(stride, length)` per level.
    pub levels: Vec<(usize, usize)>,
}

impl PyramidGeometry {
    pub fn new(frames: usize, num_levels: usize) -> Result<Self> {
        let lengths = level_lengths(frames, num_levels)?;
        Ok(Self {
            frames,
            levels: lengths.into_iter().enumerate().map(|(i, n)| (level_stride(i), n)).collect(),
        })
    }

    /// Mapped frame index of every timestamp of level `i`.
    pub fn timestamps(&self, i: usize) -> Vec<usize> {
        let (stride, len) = self.levels[i];
        level_timestamps(stride, len, self.frames)
    }
}

/// Training targets for one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTargets {
    pub positive: Vec<bool>,
    /// `[T_i, C]` row-major one-hot rows (all zero for negatives).
    pub one_hot: Vec<f64>,
    /// `(d_s, d_e)` in embedded frames; meaningful only at positives.
    pub regression: Vec<(f64, f64)>,
    /// Index of the assigned span at positives.
    pub span: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetAssignment {
    pub levels: Vec<LevelTargets>,
    pub num_positive: usize,
}

/// A timestamp is positive when its mapped center time lies strictly inside a
/// span whose length falls in the timestamp level's `(lo, hi]` range. Targets
/// are the distances from that time to the span edges, in frames.
pub fn assign_targets(
    geometry: &PyramidGeometry,
    spans: &[SpanLabel],
    spec: &FrameSpec,
    level_ranges: &[(f64, f64)],
    num_categories: usize,
) -> Result<TargetAssignment> {
    if level_ranges.len() != geometry.levels.len() {
        return Err(Error::invalid(format!(
            "{} level ranges for {} levels",
            level_ranges.len(),
            geometry.levels.len()
        )));
    }
    let mut sorted = spans.to_vec();
    sorted.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    validate_spans(&sorted, f64::INFINITY)?;
    if let Some(s) = spans.iter().find(|s| s.category >= num_categories) {
        return Err(Error::invalid(format!(
            "span category {} outside 0..{num_categories}",
            s.category
        )));
    }
    let shift_s = spec.frame_shift_ms / 1000.0;
    let mut levels = Vec::with_capacity(geometry.levels.len());
    let mut num_positive = 0;
    for (i, &(lo, hi)) in level_ranges.iter().enumerate() {
        let stamps = geometry.timestamps(i);
        let n = stamps.len();
        let mut lt = LevelTargets {
            positive: vec![false; n],
            one_hot: vec![0.0; n * num_categories],
            regression: vec![(0.0, 0.0); n],
            span: vec![None; n],
        };
        for (tau, &t) in stamps.iter().enumerate() {
            let time = spec.frame_center_s(t as f64);
            let hit = spans.iter().enumerate().find(|(_, s)| {
                let len = s.end_s - s.start_s;
                s.start_s < time && time < s.end_s && len > lo && len <= hi
            });
            if let Some((k, s)) = hit {
                lt.positive[tau] = true;
                lt.one_hot[tau * num_categories + s.category] = 1.0;
                lt.regression[tau] = ((time - s.start_s) / shift_s, (s.end_s - time) / shift_s);
                lt.span[tau] = Some(k);
                num_positive += 1;
            }
        }
        levels.push(lt);
    }
    Ok(TargetAssignment { levels, num_positive })
}
