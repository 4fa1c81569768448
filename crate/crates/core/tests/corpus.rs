use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use speechloc::corpus::*;
use speechloc::features::{log_filterbank_energies, FilterbankKind, FrameSpec};
use speechloc::seeding::rng_from;
use speechloc::Error;

fn small_config(n: usize, seed: u64) -> CorpusConfig {
    CorpusConfig {
        num_clips: n,
        min_duration_s: 1.5,
        max_duration_s: 3.0,
        seed,
        ..CorpusConfig::default()
    }
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn bonafide_count_follows_floor_rule() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CorpusConfig { bonafide_fraction: 0.3, ..small_config(10, 1) };
    let manifest = generate_corpus(&cfg, dir.path()).unwrap();
    assert_eq!(manifest.clips.len(), 10);
    let bonafide = manifest
        .clips
        .iter()
        .filter(|c| read_labels(manifest.label_path(&c.id)).unwrap().spans.is_empty())
        .count();
    assert_eq!(bonafide, 3);
}

#[test]
fn regeneration_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_corpus(&small_config(6, 4), a.path()).unwrap();
    generate_corpus(&small_config(6, 4), b.path()).unwrap();
    let (ba, bb) = (dir_bytes(a.path()), dir_bytes(b.path()));
    assert_eq!(ba.len(), 13);
    assert_eq!(ba, bb);

    let c = tempfile::tempdir().unwrap();
    generate_corpus(&small_config(6, 5), c.path()).unwrap();
    assert_ne!(dir_bytes(c.path()), ba);
}

#[test]
fn clips_depend_only_on_seed_and_index() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_corpus(&small_config(4, 9), a.path()).unwrap();
    generate_corpus(&small_config(8, 9), b.path()).unwrap();
    // a clip's audio does not depend on how many clips are generated,
    // only whether it was drawn bonafide
    let (la, lb) = (
        read_labels(a.path().join("clip_00002.json")).unwrap(),
        read_labels(b.path().join("clip_00002.json")).unwrap(),
    );
    if la.spans.is_empty() == lb.spans.is_empty() {
        assert_eq!(fs::read(a.path().join("clip_00002.wav")).unwrap(), fs::read(b.path().join("clip_00002.wav")).unwrap());
    }
}

/// Independent schema/overlap check straight on the JSON values.
fn check_label_json(v: &serde_json::Value, wav_seconds: f64, num_categories: u64) {
    let obj = v.as_object().unwrap();
    let keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    assert_eq!(keys, ["clip_id", "duration_s", "sample_rate", "spans"]);
    assert_eq!(obj["sample_rate"], 16000);
    let duration = obj["duration_s"].as_f64().unwrap();
    assert!((duration - wav_seconds).abs() < 1e-9);
    let mut prev_end = 0.0;
    for s in obj["spans"].as_array().unwrap() {
        let keys: Vec<&str> = s.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["category", "category_name", "end_s", "start_s"]);
        let (st, en) = (s["start_s"].as_f64().unwrap(), s["end_s"].as_f64().unwrap());
        assert!(st >= prev_end && st < en && en <= duration + 1e-9);
        let c = s["category"].as_u64().unwrap();
        assert!(c < num_categories);
        assert_eq!(s["category_name"].as_str(), category_name(c as usize));
        prev_end = en;
    }
}

#[test]
fn generated_labels_validate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(30, 2);
    let manifest = generate_corpus(&cfg, dir.path()).unwrap();
    let reloaded = load_manifest(dir.path()).unwrap();
    assert_eq!(reloaded, manifest);
    let eval = manifest.ids(Split::Eval).count();
    assert_eq!(eval, 6);
    for entry in &manifest.clips {
        let wav = read_wav(manifest.wav_path(&entry.id)).unwrap();
        let text = fs::read_to_string(manifest.label_path(&entry.id)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        check_label_json(&v, wav.duration_s(), cfg.num_categories as u64);
        assert_eq!(v["clip_id"], entry.id.as_str());
        let clip = load_clip(manifest.wav_path(&entry.id), Some(&manifest.label_path(&entry.id))).unwrap();
        assert!(clip.clip.samples.iter().all(|s| s.abs() <= 1.0));
        for s in &clip.spans {
            let len = s.length_s();
            assert!(len >= cfg.min_span_s - 1e-9 && len <= cfg.max_span_s + 1e-9);
        }
    }
    let manifest_json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest_json["seed"], 2);
    assert_eq!(manifest_json["clips"][0]["split"].as_str().map(|s| s == "train" || s == "eval"), Some(true));
}

#[test]
fn store_load_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let base = generate_bonafide(1.0, 1, 16000).unwrap();
    let req = SpliceRequest { start_s: 0.3, end_s: 0.6, category: 2 };
    let mut clip = splice(&base, &[req], 5.0, 3).unwrap();
    clip.clip_id = "x".into();
    let (w, l) = (dir.path().join("x.wav"), dir.path().join("x.json"));
    store_clip(&clip, &w, &l).unwrap();
    let once = load_clip(&w, Some(&l)).unwrap();
    assert_eq!(once.spans, clip.spans);
    store_clip(&once, &w, &l).unwrap();
    let twice = load_clip(&w, Some(&l)).unwrap();
    assert_eq!(once, twice);
    for (a, b) in once.clip.samples.iter().zip(&clip.clip.samples) {
        assert!((a - b).abs() <= 0.5 / 32767.0 + 1e-12);
    }
    let bare = load_clip(&w, None).unwrap();
    assert!(bare.is_bonafide());
    assert_eq!(bare.clip_id, "x");
    assert!(matches!(load_clip(dir.path().join("nope.wav"), None), Err(Error::Io { .. })));
    fs::write(&l, "{\"clip_id\": 3").unwrap();
    assert!(matches!(load_clip(&w, Some(&l)), Err(Error::Parse { .. })));
}

#[test]
fn infeasible_packing_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CorpusConfig {
        num_clips: 3,
        min_duration_s: 1.0,
        max_duration_s: 1.0,
        bonafide_fraction: 0.0,
        min_spans: 3,
        max_spans: 3,
        min_span_s: 0.5,
        max_span_s: 0.6,
        ..CorpusConfig::default()
    };
    assert!(matches!(generate_corpus(&cfg, dir.path()), Err(Error::InvalidConfig(_))));
}

/// Mean log filterbank energy over a segment, level-normalized.
fn long_term_spectrum(clip: &SpeechClip) -> Vec<f64> {
    let spec = FrameSpec { fft_size: 512, num_filters: 32, num_coeffs: 32, ..FrameSpec::default() };
    let (e, frames) = log_filterbank_energies(clip, &spec, FilterbankKind::Linear).unwrap();
    let mut mean = vec![0.0; 32];
    for t in 0..frames {
        for j in 0..32 {
            mean[j] += e[t * 32 + j] / frames as f64;
        }
    }
    let level = mean.iter().sum::<f64>() / 32.0;
    mean.iter().map(|v| v - level).collect()
}

#[test]
fn categories_are_separable_by_long_term_spectrum() {
    // classes: 0..3 forgery categories, 3 = untouched speech
    let mut rng = rng_from(77);
    let mut segment = |class: usize, k: u64| {
        let base = generate_bonafide(1.5, 1000 + k, 16000).unwrap();
        let len = rng.random_range(0.2..1.0);
        let off = rng.random_range(0.0..1.5 - len);
        let clip = if class == 3 {
            let a = (off * 16000.0) as usize;
            SpeechClip::new(base.samples[a..a + (len * 16000.0) as usize].to_vec(), 16000)
        } else {
            synthesize_span(class, len, k, &base, off).unwrap()
        };
        long_term_spectrum(&clip)
    };
    let mut centroids = vec![vec![0.0; 32]; 4];
    let per_class = 20;
    for class in 0..4 {
        for i in 0..per_class {
            let v = segment(class, (class * 1000 + i) as u64);
            for j in 0..32 {
                centroids[class][j] += v[j] / per_class as f64;
            }
        }
    }
    let mut correct = 0;
    for i in 0..100 {
        let class = i % 4;
        let v = segment(class, 50_000 + i as u64);
        let dist = |c: &Vec<f64>| c.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let guess = (0..4).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
        correct += usize::from(guess == class);
    }
    assert!(correct > 90, "nearest-centroid accuracy {correct}/100");
}

#[test]
fn config_validation() {
    assert!(CorpusConfig::default().validate().is_ok());
    let bad = CorpusConfig { num_categories: 0, ..CorpusConfig::default() };
    assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
    let bad = CorpusConfig { crossfade_ms: 150.0, ..CorpusConfig::default() };
    assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
}
