use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Short-time analysis settings. Defaults are the full-size values
/// (25 ms / 20 ms, 2048-point FFT, 256 filters, 256 coefficients).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameSpec {
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub fft_size: usize,
    pub num_filters: usize,
    pub num_coeffs: usize,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self {
            frame_length_ms: 25.0,
            frame_shift_ms: 20.0,
            fft_size: 2048,
            num_filters: 256,
            num_coeffs: 256,
        }
    }
}

impl FrameSpec {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !(self.frame_shift_ms > 0.0 && self.frame_shift_ms <= self.frame_length_ms) {
            return Err(Error::InvalidConfig(
                "frame spec: need 0 < frame_shift_ms <= frame_length_ms".into(),
            ));
        }
        if self.fft_size < self.frame_samples(sample_rate) {
            return Err(Error::InvalidConfig("frame spec: fft_size shorter than a frame".into()));
        }
        if self.num_coeffs == 0 || self.num_coeffs > self.num_filters {
            return Err(Error::InvalidConfig(
                "frame spec: need 0 < num_coeffs <= num_filters".into(),
            ));
        }
        Ok(())
    }

    pub fn frame_samples(&self, sample_rate: u32) -> usize {
        (self.frame_length_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn shift_samples(&self, sample_rate: u32) -> usize {
        (self.frame_shift_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    /// Center time in seconds of (possibly fractional) frame index `t`.
    pub fn frame_center_s(&self, t: f64) -> f64 {
        (t * self.frame_shift_ms + self.frame_length_ms / 2.0) / 1000.0
    }
}

/// Number of frames `floor((D - f_L) / f_S) + 1` for a duration of `duration_ms`.
pub fn frame_count(duration_ms: f64, frame_length_ms: f64, frame_shift_ms: f64) -> Result<usize> {
    if !(frame_shift_ms > 0.0) {
        return Err(Error::invalid("frame shift must be positive"));
    }
    if !(duration_ms >= frame_length_ms) {
        return Err(Error::invalid(format!(
            "duration {duration_ms} ms shorter than one {frame_length_ms} ms frame"
        )));
    }
    // tolerate representation error in durations derived from sample counts
    Ok(((duration_ms - frame_length_ms) / frame_shift_ms + 1e-9).floor() as usize + 1)
}
