use std::f64::consts::PI;

use proptest::prelude::*;
use speechloc::corpus::{generate_bonafide, SpeechClip};
use speechloc::features::*;
use speechloc::Error;

fn tone(hz: f64, seconds: f64) -> SpeechClip {
    let n = (seconds * 16000.0).round() as usize;
    SpeechClip::new((0..n).map(|i| 0.5 * (2.0 * PI * hz * i as f64 / 16000.0).sin()).collect(), 16000)
}

fn small_spec() -> FrameSpec {
    FrameSpec {
        fft_size: 512,
        num_filters: 40,
        num_coeffs: 20,
        ..FrameSpec::default()
    }
}

#[test]
fn frame_count_examples() {
    assert_eq!(frame_count(10000.0, 25.0, 20.0).unwrap(), 499);
    assert_eq!(frame_count(25.0, 25.0, 20.0).unwrap(), 1);
    assert_eq!(frame_count(45.0, 25.0, 20.0).unwrap(), 2);
    assert!(matches!(frame_count(24.0, 25.0, 20.0), Err(Error::InvalidArgument(_))));
}

#[test]
fn one_second_full_size_preset_shape() {
    let clip = generate_bonafide(1.0, 5, 16000).unwrap();
    for kind in [FilterbankKind::Mel, FilterbankKind::Linear] {
        let f = cepstral(&clip, &FrameSpec::default(), kind).unwrap();
        assert_eq!((f.frames, f.dim), (49, 256));
        let d = append_deltas(&f).unwrap();
        assert_eq!(d.dim, 768);
    }
}

#[test]
fn silence_gives_identical_frames() {
    let clip = SpeechClip::new(vec![0.0; 8000], 16000);
    let f = cepstral(&clip, &small_spec(), FilterbankKind::Mel).unwrap();
    for t in 1..f.frames {
        assert_eq!(f.row(t), f.row(0));
    }
    assert!(f.values.iter().all(|v| v.is_finite()));
}

/// Hann-windowed magnitude spectrum by direct summation.
fn naive_spectrum(frame: &[f64], n_fft: usize) -> Vec<f64> {
    let n = frame.len();
    (0..=n_fft / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &x) in frame.iter().enumerate() {
                let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
                let ang = -2.0 * PI * (k * i) as f64 / n_fft as f64;
                re += w * x * ang.cos();
                im += w * x * ang.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

#[test]
fn tone_peaks_in_the_channel_nearest_its_frequency() {
    for (kind, spec) in [
        (FilterbankKind::Mel, FrameSpec::default()),
        (FilterbankKind::Linear, FrameSpec::default()),
        (FilterbankKind::Mel, small_spec()),
    ] {
        let clip = tone(1000.0, 0.2);
        let (energies, frames) = log_filterbank_energies(&clip, &spec, kind).unwrap();
        let bank = Filterbank::new(kind, spec.num_filters, spec.fft_size, 16000);
        let nearest = (0..bank.len())
            .min_by(|&a, &b| (bank.centers_hz[a] - 1000.0).abs().total_cmp(&(bank.centers_hz[b] - 1000.0).abs()))
            .unwrap();
        let argmax = |row: &[f64]| (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        let frame_len = spec.frame_samples(16000);
        for t in [0, frames / 2] {
            let row = &energies[t * spec.num_filters..(t + 1) * spec.num_filters];
            assert_eq!(argmax(row), nearest, "{kind:?} frame {t}");
            // independent spectrum through the same triangles
            let start = t * spec.shift_samples(16000);
            let spectrum = naive_spectrum(&clip.samples[start..start + frame_len], spec.fft_size);
            let reference = bank.apply(&spectrum);
            assert_eq!(argmax(&reference), nearest);
            for (a, b) in row.iter().zip(&reference) {
                assert!((a - b.max(1e-10).ln()).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn deltas_of_constant_and_ramp() {
    let spec = small_spec();
    let frames = 9;
    let constant = FeatureSequence::new(vec![2.5; frames * 2], frames, 2, spec, 0.185).unwrap();
    let d = append_deltas(&constant).unwrap();
    assert_eq!(d.dim, 6);
    for t in 0..frames {
        assert_eq!(&d.row(t)[2..], &[0.0; 4]);
    }
    // ramp c_t = 3t: interior first delta = 3 * sum n*2n / (2 sum n^2) = 3
    let ramp: Vec<f32> = (0..frames).map(|t| 3.0 * t as f32).collect();
    let d = append_deltas(&FeatureSequence::new(ramp, frames, 1, spec, 0.185).unwrap()).unwrap();
    for t in 2..frames - 2 {
        assert!((d.row(t)[1] - 3.0).abs() < 1e-6, "frame {t}");
    }
    for t in 4..frames - 4 {
        assert!(d.row(t)[2].abs() < 1e-6);
    }
    assert!(matches!(
        append_deltas(&FeatureSequence::new(vec![0.0; 2], 2, 1, spec, 0.045).unwrap()),
        Err(Error::InvalidArgument(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn deltas_are_linear(a in prop::collection::vec(-5.0f32..5.0, 24), b in prop::collection::vec(-5.0f32..5.0, 24), k in -3.0f32..3.0) {
        let spec = small_spec();
        let fa = FeatureSequence::new(a.clone(), 8, 3, spec, 0.165).unwrap();
        let fb = FeatureSequence::new(b.clone(), 8, 3, spec, 0.165).unwrap();
        let sum: Vec<f32> = a.iter().zip(&b).map(|(x, y)| x + k * y).collect();
        let fs = FeatureSequence::new(sum, 8, 3, spec, 0.165).unwrap();
        let (da, db, ds) = (append_deltas(&fa).unwrap(), append_deltas(&fb).unwrap(), append_deltas(&fs).unwrap());
        for i in 0..ds.values.len() {
            prop_assert!((ds.values[i] - (da.values[i] + k * db.values[i])).abs() < 1e-4);
        }
    }

    #[test]
    fn output_height_follows_frame_count(samples in 400usize..6000, shift in 5.0f64..25.0, seed in 0u64..50) {
        let spec = FrameSpec { frame_length_ms: 25.0, frame_shift_ms: shift.round(), fft_size: 512, num_filters: 24, num_coeffs: 12 };
        let clip = SpeechClip::new(generate_bonafide(1.0, seed, 16000).unwrap().samples[..samples].to_vec(), 16000);
        let f = cepstral(&clip, &spec, FilterbankKind::Linear).unwrap();
        let want = frame_count(samples as f64 / 16.0, 25.0, spec.frame_shift_ms).unwrap();
        prop_assert_eq!(f.frames, want);
        prop_assert!(f.values.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn delaying_by_whole_shifts_moves_frames() {
    let spec = small_spec();
    let clip = generate_bonafide(1.0, 3, 16000).unwrap();
    let k = 3;
    let mut delayed = vec![0.0; k * spec.shift_samples(16000)];
    delayed.extend_from_slice(&clip.samples);
    let delayed = SpeechClip::new(delayed, 16000);
    let cfg_a = append_deltas(&cepstral(&clip, &spec, FilterbankKind::Mel).unwrap()).unwrap();
    let cfg_b = append_deltas(&cepstral(&delayed, &spec, FilterbankKind::Mel).unwrap()).unwrap();
    assert_eq!(cfg_b.frames, cfg_a.frames + k);
    // interior frames, away from delta edge effects
    for t in 4..cfg_a.frames - 4 {
        for (x, y) in cfg_a.row(t).iter().zip(cfg_b.row(t + k)) {
            assert!((x - y).abs() < 1e-4, "frame {t}");
        }
    }
}

#[test]
fn feature_files() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<f32> = (0..80).map(|i| (i as f32 * 0.37).sin() * 1e3).collect();
    let f = FeatureSequence::new(values, 10, 8, small_spec(), 0.205).unwrap();
    let path = dir.path().join("x.sff");
    store_features(&f, &path).unwrap();
    let back = load_external_features(&path).unwrap();
    assert_eq!(back.values.len(), 80);
    assert!(back.values.iter().zip(&f.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!((back.frames, back.dim), (10, 8));

    let mut bytes = encode_sff(&f);
    bytes[..4].copy_from_slice(b"XXXX");
    assert!(matches!(decode_sff(&bytes), Err(Error::UnsupportedFormat(_))));
    let bytes = encode_sff(&f);
    assert!(matches!(decode_sff(&bytes[..bytes.len() - 4]), Err(Error::CorruptFile(_))));
    assert!(matches!(load_external_features(dir.path().join("missing.sff")), Err(Error::Io { .. })));
}
