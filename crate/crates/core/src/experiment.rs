//! End-to-end experiment plumbing shared by the CLI and the acceptance suite:
//! the consolidated configuration with strict key checking, corpus-wide
//! feature extraction, and batch inference.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{load_clip, load_manifest, read_labels, CorpusConfig, CorpusManifest, LabelFile, SpeechClip, Split};
use crate::error::{json_error, Error, Result};
use crate::features::{
    append_deltas, cepstral, load_external_features, store_features, FeatureSequence, FilterbankKind, FrameSpec,
};
use crate::metrics::MetricsConfig;
use crate::model::{Model, ModelConfig};
use crate::postprocess::{postprocess, ClipPrediction, PostprocessConfig};
use crate::training::{TrainConfig, TrainingClip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Mfcc,
    Lfcc,
    /// Precomputed SFF1 files supplied alongside the audio.
    External,
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mfcc" => Ok(Self::Mfcc),
            "lfcc" => Ok(Self::Lfcc),
            "external" => Ok(Self::External),
            other => Err(Error::invalid(format!("unknown feature type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub kind: FeatureKind,
    pub frame: FrameSpec,
    pub deltas: bool,
}

impl Default for FeatureConfig {
    /// Desk preset: 20 MFCCs from 40 mel filters plus deltas (60 dims).
    fn default() -> Self {
        Self {
            kind: FeatureKind::Mfcc,
            frame: FrameSpec {
                fft_size: 512,
                num_filters: 40,
                num_coeffs: 20,
                ..FrameSpec::default()
            },
            deltas: true,
        }
    }
}

impl FeatureConfig {
    /// Feature width produced for the cepstral kinds.
    pub fn output_dim(&self) -> usize {
        self.frame.num_coeffs * if self.deltas { 3 } else { 1 }
    }
}

/// Cepstral features of one clip, with deltas when configured.
pub fn extract_features(clip: &SpeechClip, cfg: &FeatureConfig) -> Result<FeatureSequence> {
    let kind = match cfg.kind {
        FeatureKind::Mfcc => FilterbankKind::Mel,
        FeatureKind::Lfcc => FilterbankKind::Linear,
        FeatureKind::External => {
            return Err(Error::invalid("external features are loaded from files, not computed"));
        }
    };
    let base = cepstral(clip, &cfg.frame, kind)?;
    if cfg.deltas {
        append_deltas(&base)
    } else {
        Ok(base)
    }
}

/// Every setting of an experiment; each section falls back to its defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub postprocess: PostprocessConfig,
    pub metrics: MetricsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            features: FeatureConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            postprocess: PostprocessConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

/// First key path in `given` that `reference` does not have.
fn unknown_key(given: &Value, reference: &Value, path: &str) -> Option<String> {
    let (Value::Object(g), Value::Object(r)) = (given, reference) else {
        return None;
    };
    for (k, v) in g {
        let full = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match r.get(k) {
            None => return Some(full),
            Some(rv) => {
                if let Some(bad) = unknown_key(v, rv, &full) {
                    return Some(bad);
                }
            }
        }
    }
    None
}

impl ExperimentConfig {
    /// Parse JSON, rejecting unknown keys by their dotted path.
    pub fn from_json(text: &str) -> Result<Self> {
        let given: Value = serde_json::from_str(text).map_err(|e| json_error(text, e))?;
        let reference = serde_json::to_value(Self::default()).expect("defaults serialize");
        if let Some(key) = unknown_key(&given, &reference, "") {
            return Err(Error::UnknownConfigKey(key));
        }
        let cfg: Self = serde_json::from_value(given).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Apply a master seed to every seeded stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.corpus.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.frame_check()?;
        self.model.validate()?;
        self.train.validate()?;
        self.postprocess.validate()?;
        self.metrics.validate()?;
        if self.model.num_categories != self.corpus.num_categories {
            return Err(Error::InvalidConfig(format!(
                "model.num_categories {} differs from corpus.num_categories {}",
                self.model.num_categories, self.corpus.num_categories
            )));
        }
        if self.features.kind != FeatureKind::External && self.model.input_dim != self.features.output_dim() {
            return Err(Error::InvalidConfig(format!(
                "model.input_dim {} differs from the {}-dim features",
                self.model.input_dim,
                self.features.output_dim()
            )));
        }
        Ok(())
    }

    fn frame_check(&self) -> Result<()> {
        self.features.frame.validate(self.corpus.sample_rate)
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Feature directory layout: `<id>.sff` and `<id>.json` per clip, plus the manifest.
pub fn feature_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.sff"))
}

/// Compute (or, for external features, validate and copy) features for every
/// clip in a corpus directory, carrying labels and the manifest along.
pub fn featurize_corpus(corpus_dir: &Path, cfg: &FeatureConfig, out_dir: &Path) -> Result<CorpusManifest> {
    let manifest = load_manifest(corpus_dir)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for entry in &manifest.clips {
        let label_path = manifest.label_path(&entry.id);
        let features = match cfg.kind {
            FeatureKind::External => load_external_features(feature_path(corpus_dir, &entry.id))?,
            _ => {
                let clip = load_clip(manifest.wav_path(&entry.id), Some(&label_path))?;
                extract_features(&clip.clip, cfg)?
            }
        };
        store_features(&features, feature_path(out_dir, &entry.id))?;
        let dst = out_dir.join(format!("{}.json", entry.id));
        fs::copy(&label_path, &dst).map_err(|e| Error::io(&dst, e))?;
    }
    let src = corpus_dir.join("manifest.json");
    let dst = out_dir.join("manifest.json");
    fs::copy(&src, &dst).map_err(|e| Error::io(&dst, e))?;
    load_manifest(out_dir)
}

/// Features and labels of one split of a feature directory.
pub fn load_feature_split(dir: &Path, split: Option<Split>) -> Result<Vec<(TrainingClip, LabelFile)>> {
    let manifest = load_manifest(dir)?;
    manifest
        .clips
        .iter()
        .filter(|c| split.is_none_or(|s| c.split == s))
        .map(|c| {
            let labels = read_labels(manifest.label_path(&c.id))?;
            let features = load_external_features(feature_path(dir, &c.id))?;
            let clip = TrainingClip {
                clip_id: c.id.clone(),
                features,
                spans: labels.spans.clone(),
            };
            Ok((clip, labels))
        })
        .collect()
}

/// Decoded, suppressed spans for one clip.
pub fn infer_clip(
    model: &Model,
    clip_id: &str,
    features: &FeatureSequence,
    duration_s: f64,
    cfg: &PostprocessConfig,
) -> Result<ClipPrediction> {
    let dense = model.predict(features)?;
    Ok(ClipPrediction {
        clip_id: clip_id.to_string(),
        spans: postprocess(&dense, &features.frame_spec, duration_s, cfg),
    })
}
