use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::labels::store_clip;
use super::signal::{generate_bonafide, splice, SpliceRequest, NUM_SIGNATURES};
use super::AnnotatedClip;
use crate::error::{json_error, Error, Result};
use crate::seeding::{derive_seed, rng_from};

const MAX_PACKING_ATTEMPTS: usize = 100;

/// Corpus generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub num_clips: usize,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub bonafide_fraction: f64,
    pub eval_fraction: f64,
    pub min_spans: usize,
    pub max_spans: usize,
    pub min_span_s: f64,
    pub max_span_s: f64,
    pub min_gap_s: f64,
    pub num_categories: usize,
    pub crossfade_ms: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            num_clips: 100,
            min_duration_s: 2.0,
            max_duration_s: 8.0,
            bonafide_fraction: 0.3,
            eval_fraction: 0.2,
            min_spans: 1,
            max_spans: 3,
            min_span_s: 0.2,
            max_span_s: 1.0,
            min_gap_s: 0.1,
            num_categories: 3,
            crossfade_ms: 5.0,
            sample_rate: 16_000,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("corpus: {m}")));
        if self.num_categories == 0 || self.num_categories > NUM_SIGNATURES {
            return bad(&format!("num_categories must be in 1..={NUM_SIGNATURES}"));
        }
        if !(self.min_duration_s >= 0.5 && self.min_duration_s <= self.max_duration_s) {
            return bad("need 0.5 <= min_duration_s <= max_duration_s");
        }
        if !(0.0..=1.0).contains(&self.bonafide_fraction) || !(0.0..=1.0).contains(&self.eval_fraction) {
            return bad("fractions must lie in [0, 1]");
        }
        if self.min_spans == 0 || self.min_spans > self.max_spans {
            return bad("need 1 <= min_spans <= max_spans");
        }
        if !(self.min_span_s > 0.0 && self.min_span_s <= self.max_span_s) {
            return bad("need 0 < min_span_s <= max_span_s");
        }
        if self.min_gap_s < 0.0 || self.crossfade_ms < 0.0 {
            return bad("gap and crossfade must be nonnegative");
        }
        if 2.0 * self.crossfade_ms / 1000.0 > self.min_span_s {
            return bad("crossfade longer than half the shortest span");
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipEntry {
    pub id: String,
    pub split: Split,
}

/// Index of a generated corpus; `corpus_dir` is where it was read from or written to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    #[serde(skip)]
    pub corpus_dir: PathBuf,
    pub seed: u64,
    pub num_categories: usize,
    pub clips: Vec<ClipEntry>,
}

impl CorpusManifest {
    pub fn wav_path(&self, id: &str) -> PathBuf {
        self.corpus_dir.join(format!("{id}.wav"))
    }

    pub fn label_path(&self, id: &str) -> PathBuf {
        self.corpus_dir.join(format!("{id}.json"))
    }

    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.clips
            .iter()
            .filter(move |c| c.split == split)
            .map(|c| c.id.as_str())
    }
}

pub fn load_manifest(corpus_dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    let dir = corpus_dir.as_ref();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut manifest: CorpusManifest = serde_json::from_str(&text).map_err(|e| json_error(&text, e))?;
    manifest.corpus_dir = dir.to_path_buf();
    Ok(manifest)
}

fn round_ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

/// Sample non-overlapping span windows for a clip of `duration_s`.
fn pack_spans<R: Rng>(config: &CorpusConfig, duration_s: f64, rng: &mut R) -> Option<Vec<SpliceRequest>> {
    for _ in 0..MAX_PACKING_ATTEMPTS {
        let count = rng.random_range(config.min_spans..=config.max_spans);
        let lengths: Vec<f64> = (0..count)
            .map(|_| round_ms(rng.random_range(config.min_span_s..=config.max_span_s)))
            .collect();
        let free = duration_s - lengths.iter().sum::<f64>() - (count + 1) as f64 * config.min_gap_s;
        if free < 0.0 {
            continue;
        }
        // split the free time among the count + 1 gaps
        let mut cuts: Vec<f64> = (0..count).map(|_| rng.random_range(0.0..=free)).collect();
        cuts.sort_by(f64::total_cmp);
        let mut requests = Vec::with_capacity(count);
        let mut cursor = 0.0;
        let mut prev_cut = 0.0;
        for (len, cut) in lengths.iter().zip(&cuts) {
            cursor += config.min_gap_s + (cut - prev_cut);
            prev_cut = *cut;
            let start = round_ms(cursor);
            let end = round_ms(start + len).min(duration_s);
            requests.push(SpliceRequest {
                start_s: start,
                end_s: end,
                category: rng.random_range(0..config.num_categories),
            });
            cursor = end;
        }
        return Some(requests);
    }
    None
}

/// Build clip `index` of the corpus. Depends only on `(config, index, bonafide)`.
fn build_clip(config: &CorpusConfig, index: usize, bonafide: bool) -> Result<AnnotatedClip> {
    let clip_seed = derive_seed(config.seed, index as u64);
    let mut rng = rng_from(clip_seed);
    let id = format!("clip_{index:05}");
    for _ in 0..MAX_PACKING_ATTEMPTS {
        let duration = (rng.random_range(config.min_duration_s..=config.max_duration_s) * 100.0).round() / 100.0;
        let base = generate_bonafide(duration, derive_seed(clip_seed, 1), config.sample_rate)?;
        let requests = if bonafide {
            Vec::new()
        } else {
            match pack_spans(config, duration, &mut rng) {
                Some(r) => r,
                None => continue,
            }
        };
        let mut clip = splice(&base, &requests, config.crossfade_ms, derive_seed(clip_seed, 2))?;
        clip.clip_id = id;
        return Ok(clip);
    }
    Err(Error::InvalidConfig(format!(
        "could not pack spans into clip {index} after {MAX_PACKING_ATTEMPTS} attempts"
    )))
}

/// Write `num_clips` WAV + label pairs and `manifest.json` into `out_dir`.
pub fn generate_corpus(config: &CorpusConfig, out_dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let n = config.num_clips;
    let num_bonafide = (n as f64 * config.bonafide_fraction).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(derive_seed(config.seed, u64::MAX)));
    let mut bonafide = vec![false; n];
    for &i in &order[..num_bonafide] {
        bonafide[i] = true;
    }
    // eval split stratified over bonafide and forged clips
    let mut split = vec![Split::Train; n];
    for group in [&order[..num_bonafide], &order[num_bonafide..]] {
        let k = (group.len() as f64 * config.eval_fraction).round() as usize;
        for &i in &group[..k] {
            split[i] = Split::Eval;
        }
    }

    let mut clips = Vec::with_capacity(n);
    for index in 0..n {
        let clip = build_clip(config, index, bonafide[index])?;
        store_clip(
            &clip,
            out_dir.join(format!("{}.wav", clip.clip_id)),
            out_dir.join(format!("{}.json", clip.clip_id)),
        )?;
        clips.push(ClipEntry {
            id: clip.clip_id,
            split: split[index],
        });
    }
    let manifest = CorpusManifest {
        corpus_dir: out_dir.to_path_buf(),
        seed: config.seed,
        num_categories: config.num_categories,
        clips,
    };
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
