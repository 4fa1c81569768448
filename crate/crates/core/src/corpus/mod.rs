//! Toy spliced-speech corpus: speech-like source audio, category-specific
//! synthetic "forgery" signatures, splicing with exact ground truth, and
//! WAV/label persistence.

mod generate;
mod labels;
mod signal;
mod wav;

pub use generate::{generate_corpus, load_manifest, ClipEntry, CorpusConfig, CorpusManifest, Split};
pub use labels::{load_clip, parse_labels, read_labels, store_clip, validate_spans, LabelFile};
pub use signal::{
    category_name, generate_bonafide, splice, synthesize_span, SpliceRequest, NUM_SIGNATURES,
};
pub use wav::{decode_wav, encode_wav, quantize, read_wav, write_wav};

use serde::{Deserialize, Serialize};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono waveform with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl SpeechClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// A forged span: `[start_s, end_s)` produced by synthesis category `category`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanLabel {
    pub start_s: f64,
    pub end_s: f64,
    pub category: usize,
    pub category_name: String,
}

impl SpanLabel {
    pub fn length_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Waveform plus ground truth. No spans means bonafide.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedClip {
    pub clip_id: String,
    pub clip: SpeechClip,
    pub spans: Vec<SpanLabel>,
}

impl AnnotatedClip {
    pub fn is_bonafide(&self) -> bool {
        self.spans.is_empty()
    }
}
