use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::wav::{read_wav, write_wav};
use super::{AnnotatedClip, SpanLabel};
use crate::error::{json_error, Error, Result};

/// Per-clip label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelFile {
    pub clip_id: String,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub spans: Vec<SpanLabel>,
}

/// Check span ordering, bounds and pairwise disjointness.
pub fn validate_spans(spans: &[SpanLabel], duration_s: f64) -> Result<()> {
    const SLACK: f64 = 1e-9;
    for (k, s) in spans.iter().enumerate() {
        if !(s.start_s >= 0.0 && s.start_s < s.end_s && s.end_s <= duration_s + SLACK) {
            return Err(Error::invalid(format!(
                "span {k} [{}, {}) violates 0 <= start < end <= {duration_s}",
                s.start_s, s.end_s
            )));
        }
    }
    for (k, pair) in spans.windows(2).enumerate() {
        if pair[1].start_s < pair[0].end_s {
            return Err(Error::invalid(format!(
                "spans {k} and {} are unsorted or overlap",
                k + 1
            )));
        }
    }
    Ok(())
}

pub fn parse_labels(text: &str) -> Result<LabelFile> {
    let labels: LabelFile = serde_json::from_str(text).map_err(|e| json_error(text, e))?;
    if labels.sample_rate == 0 {
        return Err(Error::invalid("label sample_rate must be positive"));
    }
    validate_spans(&labels.spans, labels.duration_s)?;
    Ok(labels)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text)
}

/// Load a WAV and, optionally, its labels. Without labels the clip is bonafide
/// and its id is the file stem.
pub fn load_clip(wav_path: impl AsRef<Path>, label_path: Option<&Path>) -> Result<AnnotatedClip> {
    let wav_path = wav_path.as_ref();
    let clip = read_wav(wav_path)?;
    match label_path {
        Some(p) => {
            let labels = read_labels(p)?;
            validate_spans(&labels.spans, clip.duration_s())?;
            Ok(AnnotatedClip {
                clip_id: labels.clip_id,
                clip,
                spans: labels.spans,
            })
        }
        None => Ok(AnnotatedClip {
            clip_id: wav_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            clip,
            spans: Vec::new(),
        }),
    }
}

pub fn store_clip(clip: &AnnotatedClip, wav_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<()> {
    let mut spans = clip.spans.clone();
    spans.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    validate_spans(&spans, clip.clip.duration_s())?;
    write_wav(&clip.clip, wav_path)?;
    let labels = LabelFile {
        clip_id: clip.clip_id.clone(),
        duration_s: clip.clip.duration_s(),
        sample_rate: clip.clip.sample_rate,
        spans,
    };
    let label_path = label_path.as_ref();
    let text = serde_json::to_string_pretty(&labels).expect("labels serialize");
    fs::write(label_path, text + "\n").map_err(|e| Error::io(label_path, e))
}
