//! Frame-level features: framing geometry, MFCC/LFCC cepstra with delta
//! concatenation, and the SFF1 file format for externally computed features.

mod cepstral;
mod deltas;
mod frames;
mod sff;

pub use cepstral::{cepstral, log_filterbank_energies, Filterbank, FilterbankKind};
pub use deltas::append_deltas;
pub use frames::{frame_count, FrameSpec};
pub use sff::{decode_sff, encode_sff, load_external_features, store_features};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// `frames x dim` row-major feature matrix with its framing geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub values: Vec<f32>,
    pub frames: usize,
    pub dim: usize,
    pub frame_spec: FrameSpec,
    pub duration_s: f64,
}

impl FeatureSequence {
    pub fn new(values: Vec<f32>, frames: usize, dim: usize, frame_spec: FrameSpec, duration_s: f64) -> Result<Self> {
        if frames == 0 || dim == 0 || values.len() != frames * dim {
            return Err(Error::invalid(format!(
                "feature matrix {frames}x{dim} does not match {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature values must be finite"));
        }
        Ok(Self {
            values,
            frames,
            dim,
            frame_spec,
            duration_s,
        })
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.frames, self.dim],
            self.values.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("shape checked at construction")
    }
}
