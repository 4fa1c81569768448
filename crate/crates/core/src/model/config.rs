use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network hyperparameters. Defaults are the desk preset (60-dim input,
/// 64-wide model, 4 levels, under 200k parameters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub model_dim: usize,
    pub num_levels: usize,
    /// Fixed at 2.
    pub downsample_factor: usize,
    pub num_heads: usize,
    pub lstm_hidden: usize,
    pub ffn_hidden: usize,
    pub head_hidden: usize,
    pub mdc_kernel: usize,
    pub mdc_theta: f64,
    pub num_categories: usize,
    /// Upper span length (seconds) handled by each level but the last; the
    /// last level takes everything longer.
    pub level_max_span_s: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 60,
            model_dim: 64,
            num_levels: 4,
            downsample_factor: 2,
            num_heads: 4,
            lstm_hidden: 16,
            ffn_hidden: 64,
            head_hidden: 32,
            mdc_kernel: 3,
            mdc_theta: 0.7,
            num_categories: 3,
            level_max_span_s: vec![0.4, 0.8, 1.6],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("model: {m}")));
        if self.input_dim == 0 || self.model_dim == 0 || self.num_categories == 0 {
            return bad("input_dim, model_dim and num_categories must be positive".into());
        }
        if self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return bad(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            ));
        }
        if self.num_levels == 0 {
            return bad("num_levels must be at least 1".into());
        }
        if self.downsample_factor != 2 {
            return bad("downsample_factor is fixed at 2".into());
        }
        if self.lstm_hidden == 0 || self.ffn_hidden == 0 || self.head_hidden == 0 {
            return bad("hidden sizes must be positive".into());
        }
        if self.mdc_kernel % 2 == 0 {
            return bad("mdc_kernel must be odd".into());
        }
        if !(0.0..=1.0).contains(&self.mdc_theta) {
            return bad(format!("mdc_theta {} outside [0, 1]", self.mdc_theta));
        }
        if self.level_max_span_s.len() + 1 != self.num_levels {
            return bad(format!(
                "level_max_span_s needs {} entries for {} levels",
                self.num_levels - 1,
                self.num_levels
            ));
        }
        let increasing = self
            .level_max_span_s
            .iter()
            .try_fold(0.0, |prev, &x| (x > prev && x.is_finite()).then_some(x))
            .is_some();
        if !increasing {
            return bad("level_max_span_s must be positive and strictly increasing".into());
        }
        Ok(())
    }

    /// Span-length interval `(lo, hi]` in seconds for each level.
    pub fn level_ranges(&self) -> Vec<(f64, f64)> {
        let mut bounds = vec![0.0];
        bounds.extend(&self.level_max_span_s);
        bounds.push(f64::INFINITY);
        bounds.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }
}

/// Cumulative stride of level `level` (0-based): `2^level`.
pub fn level_stride(level: usize) -> usize {
    1 << level
}

/// Level lengths by repeated ceil-halving. Fails when some level of length 1
/// would be halved again (`T <= 2^(L-2)`).
pub fn level_lengths(frames: usize, num_levels: usize) -> Result<Vec<usize>> {
    if num_levels == 0 {
        return Err(Error::invalid("need at least one level"));
    }
    let mut lengths = vec![frames];
    for _ in 1..num_levels {
        let last = *lengths.last().expect("non-empty");
        if last < 2 {
            return Err(Error::invalid(format!(
                "{frames} frames too short for a {num_levels}-level pyramid"
            )));
        }
        lengths.push(last.div_ceil(2));
    }
    if frames == 0 {
        return Err(Error::invalid("empty feature sequence"));
    }
    Ok(lengths)
}

/// Frame index of virtual timestamp `tau` at a level of the given stride:
/// `floor(s/2) + tau * s`.
pub fn map_timestamp(stride: usize, tau: usize) -> usize {
    stride / 2 + tau * stride
}

/// Mapped frame indices for every timestamp of a level, clamped into
/// `[0, frames)`. The clamp only touches the last timestamp of a level whose
/// stride window overhangs the sequence end, so the result stays strictly increasing.
pub fn level_timestamps(stride: usize, len: usize, frames: usize) -> Vec<usize> {
    (0..len)
        .map(|tau| map_timestamp(stride, tau).min(frames.saturating_sub(1)))
        .collect()
}
