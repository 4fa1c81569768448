//! SFF1 feature files: magic `SFF1`, version u32 = 1, T u32, E u32,
//! frame_shift_ms f32, frame_length_ms f32, then `T * E` f32 values, time-major.
//! All little-endian.

use std::fs;
use std::path::Path;

use super::{FeatureSequence, FrameSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SFF1";
const HEADER: usize = 24;

pub fn encode_sff(features: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + features.values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(features.frames as u32).to_le_bytes());
    out.extend_from_slice(&(features.dim as u32).to_le_bytes());
    out.extend_from_slice(&(features.frame_spec.frame_shift_ms as f32).to_le_bytes());
    out.extend_from_slice(&(features.frame_spec.frame_length_ms as f32).to_le_bytes());
    for v in &features.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_sff(bytes: &[u8]) -> Result<FeatureSequence> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::UnsupportedFormat("missing SFF1 magic".into()));
    }
    if bytes.len() < HEADER {
        return Err(Error::CorruptFile("SFF1 header truncated".into()));
    }
    let word = |at: usize| [bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]];
    let version = u32::from_le_bytes(word(4));
    if version != 1 {
        return Err(Error::UnsupportedFormat(format!("SFF1 version {version}")));
    }
    let frames = u32::from_le_bytes(word(8)) as usize;
    let dim = u32::from_le_bytes(word(12)) as usize;
    let shift = f32::from_le_bytes(word(16)) as f64;
    let length = f32::from_le_bytes(word(20)) as f64;
    let payload = &bytes[HEADER..];
    if payload.len() != frames * dim * 4 {
        return Err(Error::CorruptFile(format!(
            "header declares {frames}x{dim} values but payload holds {} bytes",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let spec = FrameSpec {
        frame_length_ms: length,
        frame_shift_ms: shift,
        num_coeffs: dim,
        num_filters: dim,
        ..FrameSpec::default()
    };
    let duration_s = ((frames.max(1) - 1) as f64 * shift + length) / 1000.0;
    FeatureSequence::new(values, frames, dim, spec, duration_s).map_err(|e| Error::CorruptFile(e.to_string()))
}

pub fn store_features(features: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_sff(features)).map_err(|e| Error::io(path, e))
}

pub fn load_external_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_sff(&bytes)
}
