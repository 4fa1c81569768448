use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{AnnotatedClip, SpanLabel, SpeechClip};
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, rng_from};

/// Number of distinct synthesis signatures available as forgery categories.
pub const NUM_SIGNATURES: usize = 6;

const SIGNATURE_NAMES: [&str; NUM_SIGNATURES] = [
    "band_noise",
    "ring_mod",
    "spectral_tilt",
    "quantize",
    "sample_hold",
    "soft_clip",
];

pub fn category_name(category: usize) -> Option<&'static str> {
    SIGNATURE_NAMES.get(category).copied()
}

/// One requested forged window `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpliceRequest {
    pub start_s: f64,
    pub end_s: f64,
    pub category: usize,
}

fn sample_index(t: f64, rate: u32) -> usize {
    (t * rate as f64).round() as usize
}

/// Harmonic speech-like source: drifting fundamental in 80–300 Hz with 3–6
/// harmonics, a syllable-rate amplitude envelope and a low noise floor.
pub fn generate_bonafide(duration_s: f64, seed: u64, sample_rate: u32) -> Result<SpeechClip> {
    if !(duration_s >= 0.5) || !duration_s.is_finite() {
        return Err(Error::invalid(format!(
            "bonafide duration must be at least 0.5 s, got {duration_s}"
        )));
    }
    if sample_rate == 0 {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let mut rng = rng_from(seed);
    let sr = sample_rate as f64;
    let n = sample_index(duration_s, sample_rate);

    let f0_base = rng.random_range(110.0..200.0);
    let (slow_amp, slow_rate, slow_phase) = (
        rng.random_range(10.0..40.0),
        rng.random_range(0.2..0.7),
        rng.random_range(0.0..2.0 * PI),
    );
    let (fast_amp, fast_rate, fast_phase) = (
        rng.random_range(5.0..20.0),
        rng.random_range(1.0..3.0),
        rng.random_range(0.0..2.0 * PI),
    );
    let harmonics = rng.random_range(3..=6usize);
    let amps: Vec<f64> = (1..=harmonics)
        .map(|h| rng.random_range(0.5..1.0) / h as f64)
        .collect();
    let (env_rate, env_phase) = (rng.random_range(2.5..5.0), rng.random_range(0.0..2.0 * PI));

    let mut phase = 0.0;
    let mut voiced = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let f0 = (f0_base
            + slow_amp * (2.0 * PI * slow_rate * t + slow_phase).sin()
            + fast_amp * (2.0 * PI * fast_rate * t + fast_phase).sin())
        .clamp(80.0, 300.0);
        phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI);
        let env = 0.65 + 0.35 * (2.0 * PI * env_rate * t + env_phase).sin();
        let s: f64 = amps
            .iter()
            .enumerate()
            .map(|(h, a)| a * ((h + 1) as f64 * phase).sin())
            .sum();
        voiced.push(env * s);
    }
    let peak = voiced.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let samples = voiced
        .into_iter()
        .map(|v| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            (0.6 * v / peak + 0.003 * noise).clamp(-1.0, 1.0)
        })
        .collect();
    Ok(SpeechClip::new(samples, sample_rate))
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// RBJ band-pass biquad (0 dB peak gain).
fn bandpass(x: &[f64], center_hz: f64, q: f64, sr: f64) -> Vec<f64> {
    let w0 = 2.0 * PI * center_hz / sr;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = b0 * v + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = v;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

/// Apply signature `category` to `base[start..start + len]`.
fn synthesize_window(category: usize, seed: u64, base: &SpeechClip, start: usize, len: usize) -> Result<Vec<f64>> {
    if category >= NUM_SIGNATURES {
        return Err(Error::invalid(format!(
            "unknown synthesis category {category} (have {NUM_SIGNATURES})"
        )));
    }
    if start + len > base.samples.len() {
        return Err(Error::invalid("synthesis window exceeds the base clip"));
    }
    let sr = base.sample_rate as f64;
    let x = &base.samples[start..start + len];
    let mut rng = rng_from(derive_seed(seed, category as u64));
    let level = rms(x).max(0.01);
    let y: Vec<f64> = match category {
        // band-limited noise around 4 kHz
        0 => {
            let center = 4000.0 * rng.random_range(0.9..1.1);
            let white: Vec<f64> = (0..len + 256).map(|_| StandardNormal.sample(&mut rng)).collect();
            let band = bandpass(&white, center, 2.0, sr);
            let band = &band[256..];
            let scale = 0.6 * level / rms(band).max(1e-12);
            x.iter().zip(band).map(|(a, b)| a + scale * b).collect()
        }
        // ring modulation
        1 => {
            let carrier = rng.random_range(900.0..1300.0);
            x.iter()
                .enumerate()
                .map(|(i, a)| 1.4 * a * (2.0 * PI * carrier * (start + i) as f64 / sr).cos())
                .collect()
        }
        // strong first-order pre-emphasis, level matched
        2 => {
            let coef = rng.random_range(0.9..0.97);
            let mut prev = if start > 0 { base.samples[start - 1] } else { x[0] };
            let tilted: Vec<f64> = x
                .iter()
                .map(|&a| {
                    let y = a - coef * prev;
                    prev = a;
                    y
                })
                .collect();
            let gain = level / rms(&tilted).max(1e-12);
            tilted.into_iter().map(|v| v * gain).collect()
        }
        // coarse amplitude quantization
        3 => {
            let steps = f64::from(rng.random_range(3..=4u32));
            let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-6);
            x.iter()
                .map(|a| (a / peak * steps).round() / steps * peak)
                .collect()
        }
        // sample-and-hold decimation (aliasing images)
        4 => {
            let hold = rng.random_range(4..=6usize);
            (0..len).map(|i| x[i - i % hold]).collect()
        }
        // hard saturation
        _ => {
            let drive = rng.random_range(6.0..10.0);
            let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-6);
            x.iter()
                .map(|a| (drive * a / peak).tanh() * 0.8 * peak)
                .collect()
        }
    };
    Ok(y.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect())
}

/// Synthetic segment of `duration_s` carrying the signature of `category`,
/// derived from `base` starting at `offset_s`.
pub fn synthesize_span(
    category: usize,
    duration_s: f64,
    seed: u64,
    base: &SpeechClip,
    offset_s: f64,
) -> Result<SpeechClip> {
    if !(offset_s >= 0.0) || !(duration_s > 0.0) {
        return Err(Error::invalid("synthesis window must have offset >= 0 and positive duration"));
    }
    let start = sample_index(offset_s, base.sample_rate);
    let len = sample_index(duration_s, base.sample_rate);
    if len == 0 || start + len > base.samples.len() {
        return Err(Error::invalid(format!(
            "synthesis window [{offset_s}, {}] lies outside the base clip",
            offset_s + duration_s
        )));
    }
    let samples = synthesize_window(category, seed, base, start, len)?;
    Ok(SpeechClip::new(samples, base.sample_rate))
}

/// Replace each requested window of `base` by synthesized audio, blending
/// `crossfade_ms` at both inner edges. Labels equal the requests exactly.
pub fn splice(base: &SpeechClip, requests: &[SpliceRequest], crossfade_ms: f64, seed: u64) -> Result<AnnotatedClip> {
    if !(crossfade_ms >= 0.0) {
        return Err(Error::invalid("crossfade must be nonnegative"));
    }
    let duration = base.duration_s();
    let mut sorted = requests.to_vec();
    sorted.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    for r in &sorted {
        if !(r.start_s >= 0.0 && r.start_s < r.end_s && r.end_s <= duration) {
            return Err(Error::invalid(format!(
                "splice window [{}, {}) outside [0, {duration}]",
                r.start_s, r.end_s
            )));
        }
        if category_name(r.category).is_none() {
            return Err(Error::invalid(format!("unknown synthesis category {}", r.category)));
        }
    }
    for pair in sorted.windows(2) {
        if pair[1].start_s < pair[0].end_s {
            return Err(Error::invalid(format!(
                "splice windows [{}, {}) and [{}, {}) overlap",
                pair[0].start_s, pair[0].end_s, pair[1].start_s, pair[1].end_s
            )));
        }
    }
    let fade = (crossfade_ms * base.sample_rate as f64 / 1000.0).round() as usize;
    let mut out = base.samples.clone();
    let mut spans = Vec::with_capacity(sorted.len());
    for (k, r) in sorted.iter().enumerate() {
        let start = sample_index(r.start_s, base.sample_rate);
        let end = sample_index(r.end_s, base.sample_rate).min(out.len());
        if end <= start || end - start < 2 * fade {
            return Err(Error::invalid(format!(
                "span [{}, {}) is shorter than twice the {crossfade_ms} ms crossfade",
                r.start_s, r.end_s
            )));
        }
        let len = end - start;
        let synth = synthesize_window(r.category, derive_seed(seed, k as u64), base, start, len)?;
        for (i, &s) in synth.iter().enumerate() {
            let edge = i.min(len - 1 - i);
            out[start + i] = if edge < fade {
                let w = (edge + 1) as f64 / (fade + 1) as f64;
                (1.0 - w) * base.samples[start + i] + w * s
            } else {
                s
            };
        }
        spans.push(SpanLabel {
            start_s: r.start_s,
            end_s: r.end_s,
            category: r.category,
            category_name: category_name(r.category).unwrap_or_default().to_string(),
        });
    }
    Ok(AnnotatedClip {
        clip_id: String::new(),
        clip: SpeechClip::new(out, base.sample_rate),
        spans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(hz: f64, seconds: f64) -> SpeechClip {
        let n = (seconds * 16000.0) as usize;
        SpeechClip::new(
            (0..n)
                .map(|i| 0.5 * (2.0 * PI * hz * i as f64 / 16000.0).sin())
                .collect(),
            16000,
        )
    }

    #[test]
    fn bonafide_length_and_determinism() {
        let a = generate_bonafide(2.0, 7, 16000).unwrap();
        assert_eq!(a.samples.len(), 32000);
        let b = generate_bonafide(2.0, 7, 16000).unwrap();
        assert!(a.samples.iter().zip(&b.samples).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = generate_bonafide(2.0, 8, 16000).unwrap();
        assert_ne!(a.samples, c.samples);
        assert!(a.samples.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }

    #[test]
    fn bonafide_rejects_short_duration() {
        assert!(matches!(generate_bonafide(0.49, 1, 16000), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn synthesized_span_differs_and_has_requested_length() {
        let base = tone(440.0, 1.0);
        let seg = synthesize_span(0, 0.5, 3, &base, 0.25).unwrap();
        assert_eq!(seg.samples.len(), 8000);
        let orig = &base.samples[4000..12000];
        let mse: f64 = seg.samples.iter().zip(orig).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 8000.0;
        assert!(mse > 0.0);
        for c in 0..NUM_SIGNATURES {
            let seg = synthesize_span(c, 0.5, 3, &base, 0.25).unwrap();
            assert_ne!(seg.samples, orig, "category {c} left the base untouched");
        }
    }

    #[test]
    fn synthesize_rejects_bad_arguments() {
        let base = tone(440.0, 1.0);
        assert!(synthesize_span(NUM_SIGNATURES, 0.5, 0, &base, 0.0).is_err());
        assert!(synthesize_span(0, 0.5, 0, &base, 0.75).is_err());
    }

    #[test]
    fn splice_identity_and_locality() {
        let base = generate_bonafide(1.5, 2, 16000).unwrap();
        let same = splice(&base, &[], 5.0, 0).unwrap();
        assert_eq!(same.clip, base);
        assert!(same.spans.is_empty());

        let req = SpliceRequest {
            start_s: 0.5,
            end_s: 1.0,
            category: 1,
        };
        let out = splice(&base, &[req], 0.0, 9).unwrap();
        for (i, (a, b)) in out.clip.samples.iter().zip(&base.samples).enumerate() {
            if (8000..16000).contains(&i) {
                continue;
            }
            assert_eq!(a.to_bits(), b.to_bits(), "sample {i} changed");
        }
        assert_ne!(&out.clip.samples[8000..16000], &base.samples[8000..16000]);
        assert_eq!(out.spans.len(), 1);
        assert_eq!((out.spans[0].start_s, out.spans[0].end_s), (0.5, 1.0));
        assert_eq!(out.spans[0].category_name, "ring_mod");
    }

    #[test]
    fn splice_crossfade_stays_inside_window() {
        let base = generate_bonafide(1.0, 4, 16000).unwrap();
        let req = SpliceRequest {
            start_s: 0.25,
            end_s: 0.5,
            category: 0,
        };
        let out = splice(&base, &[req], 5.0, 1).unwrap();
        let hard = splice(&base, &[req], 0.0, 1).unwrap();
        for i in (0..4000).chain(8000..16000) {
            assert_eq!(out.clip.samples[i].to_bits(), base.samples[i].to_bits());
        }
        // interior identical to the hard cut, edges blended
        assert_eq!(&out.clip.samples[4080..7920], &hard.clip.samples[4080..7920]);
        let first_w = 1.0 / 81.0;
        let want = (1.0 - first_w) * base.samples[4000] + first_w * hard.clip.samples[4000];
        assert!((out.clip.samples[4000] - want).abs() < 1e-15);
    }

    #[test]
    fn splice_rejects_overlap_and_short_spans() {
        let base = generate_bonafide(1.0, 4, 16000).unwrap();
        let reqs = [
            SpliceRequest {
                start_s: 0.2,
                end_s: 0.5,
                category: 0,
            },
            SpliceRequest {
                start_s: 0.4,
                end_s: 0.8,
                category: 1,
            },
        ];
        assert!(matches!(splice(&base, &reqs, 0.0, 0), Err(Error::InvalidArgument(_))));
        let short = [SpliceRequest {
            start_s: 0.2,
            end_s: 0.205,
            category: 0,
        }];
        assert!(matches!(splice(&base, &short, 5.0, 0), Err(Error::InvalidArgument(_))));
    }
}
