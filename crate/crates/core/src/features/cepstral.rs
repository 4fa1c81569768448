use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{FeatureSequence, FrameSpec};
use crate::corpus::SpeechClip;
use crate::error::{Error, Result};

const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterbankKind {
    /// Mel-spaced triangles (MFCC).
    Mel,
    /// Linearly spaced triangles (LFCC).
    Linear,
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over the `fft_size / 2 + 1` magnitude bins.
#[derive(Debug, Clone)]
pub struct Filterbank {
    pub centers_hz: Vec<f64>,
    // (first bin, weights) per filter
    filters: Vec<(usize, Vec<f64>)>,
}

impl Filterbank {
    pub fn new(kind: FilterbankKind, num_filters: usize, fft_size: usize, sample_rate: u32) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let edges: Vec<f64> = match kind {
            FilterbankKind::Mel => {
                let top = hz_to_mel(nyquist);
                (0..num_filters + 2)
                    .map(|i| mel_to_hz(top * i as f64 / (num_filters + 1) as f64))
                    .collect()
            }
            FilterbankKind::Linear => (0..num_filters + 2)
                .map(|i| nyquist * i as f64 / (num_filters + 1) as f64)
                .collect(),
        };
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let bins = fft_size / 2 + 1;
        let filters = (1..=num_filters)
            .map(|m| {
                let (lo, mid, hi) = (edges[m - 1], edges[m], edges[m + 1]);
                let first = (lo / bin_hz).ceil() as usize;
                let last = ((hi / bin_hz).floor() as usize).min(bins - 1);
                let weights = (first..=last.max(first))
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= mid {
                            ((f - lo) / (mid - lo)).max(0.0)
                        } else {
                            ((hi - f) / (hi - mid)).max(0.0)
                        }
                    })
                    .collect();
                (first.min(bins - 1), weights)
            })
            .collect();
        Self {
            centers_hz: edges[1..=num_filters].to_vec(),
            filters,
        }
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// Filter outputs for one magnitude spectrum.
    pub fn apply(&self, magnitude: &[f64]) -> Vec<f64> {
        self.filters
            .iter()
            .map(|(first, w)| {
                w.iter()
                    .zip(&magnitude[*first..])
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Per-frame log filterbank energies (the pre-DCT stage), `frames x num_filters`.
pub fn log_filterbank_energies(
    clip: &SpeechClip,
    spec: &FrameSpec,
    kind: FilterbankKind,
) -> Result<(Vec<f64>, usize)> {
    spec.validate(clip.sample_rate)?;
    let frame_len = spec.frame_samples(clip.sample_rate);
    let shift = spec.shift_samples(clip.sample_rate);
    if clip.samples.len() < frame_len {
        return Err(Error::invalid(format!(
            "clip of {} samples is shorter than one {frame_len}-sample frame",
            clip.samples.len()
        )));
    }
    let frames = (clip.samples.len() - frame_len) / shift + 1;
    let bank = Filterbank::new(kind, spec.num_filters, spec.fft_size, clip.sample_rate);
    let window = hann(frame_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(spec.fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); spec.fft_size];
    let mut magnitude = vec![0.0; spec.fft_size / 2 + 1];
    let mut out = Vec::with_capacity(frames * spec.num_filters);
    for t in 0..frames {
        let frame = &clip.samples[t * shift..t * shift + frame_len];
        for (k, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(if k < frame_len { frame[k] * window[k] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        for (m, c) in magnitude.iter_mut().zip(&buf) {
            *m = c.norm();
        }
        out.extend(bank.apply(&magnitude).into_iter().map(|e| e.max(LOG_FLOOR).ln()));
    }
    Ok((out, frames))
}

/// Orthonormal DCT-II basis, `num_coeffs x n`.
fn dct_matrix(num_coeffs: usize, n: usize) -> Vec<f64> {
    let mut m = Vec::with_capacity(num_coeffs * n);
    for k in 0..num_coeffs {
        let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            m.push(s * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos());
        }
    }
    m
}

/// MFCC (mel) or LFCC (linear) cepstra: Hann window, magnitude spectrum,
/// triangular filterbank, floored log, DCT-II, first `num_coeffs` coefficients.
pub fn cepstral(clip: &SpeechClip, spec: &FrameSpec, kind: FilterbankKind) -> Result<FeatureSequence> {
    let (energies, frames) = log_filterbank_energies(clip, spec, kind)?;
    let n = spec.num_filters;
    let basis = dct_matrix(spec.num_coeffs, n);
    let mut values = Vec::with_capacity(frames * spec.num_coeffs);
    for t in 0..frames {
        let row = &energies[t * n..(t + 1) * n];
        for k in 0..spec.num_coeffs {
            let c: f64 = basis[k * n..(k + 1) * n].iter().zip(row).map(|(a, b)| a * b).sum();
            values.push(c as f32);
        }
    }
    FeatureSequence::new(values, frames, spec.num_coeffs, *spec, clip.duration_s())
}
