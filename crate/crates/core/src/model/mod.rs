//! The localization network: masked difference convolution embedding,
//! R-Transformer feature pyramid with top-down fusion, and shared
//! classification / localization heads producing dense span proposals.

mod config;
mod layers;
mod params;

pub use config::{level_lengths, level_stride, level_timestamps, map_timestamp, ModelConfig};
pub use layers::{
    build_pyramid, forward, mdc_project, pool_mask, predict_heads, rtransformer_block, FeaturePyramid, LevelOutput,
    PyramidLevel,
};
pub use params::{init_params, parameter_count};

use std::path::Path;

use crate::autodiff::{load_checkpoint, store_checkpoint, Graph, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;

/// Dense outputs of one level as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPrediction {
    /// `[T_i, C]` category logits.
    pub logits: Tensor,
    /// `[T_i, 2]` onset/offset distances in embedded-frame units.
    pub distances: Tensor,
    pub stride: usize,
    pub mask: Vec<bool>,
}

impl LevelPrediction {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

/// Per-timestamp proposals over all pyramid levels, plus the embedded
/// sequence length they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct DensePrediction {
    pub levels: Vec<LevelPrediction>,
    pub frames: usize,
}

impl DensePrediction {
    pub fn from_outputs(g: &Graph, outputs: &[LevelOutput], frames: usize) -> Self {
        Self {
            levels: outputs
                .iter()
                .map(|o| LevelPrediction {
                    logits: g.value(o.logits).clone(),
                    distances: g.value(o.distances).clone(),
                    stride: o.stride,
                    mask: o.mask.clone(),
                })
                .collect(),
            frames,
        }
    }
}

/// Per-dimension standardization fitted on training features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    const STD_FLOOR: f64 = 1e-6;

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Pooled mean and standard deviation over every frame of every sequence.
    pub fn fit<'a>(sequences: impl IntoIterator<Item = &'a FeatureSequence>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for seq in sequences {
            if sum.is_empty() {
                sum = vec![0.0; seq.dim];
                sq = vec![0.0; seq.dim];
            }
            if seq.dim != sum.len() {
                return Err(Error::invalid("feature sequences differ in dimension"));
            }
            for row in seq.values.chunks(seq.dim) {
                for (j, &v) in row.iter().enumerate() {
                    let v = f64::from(v);
                    sum[j] += v;
                    sq[j] += v * v;
                }
            }
            n += seq.frames;
        }
        if n == 0 {
            return Err(Error::invalid("cannot fit normalization on zero frames"));
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / nf - m * m).max(0.0).sqrt().max(Self::STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    /// Standardized `[T, E]` tensor.
    pub fn apply(&self, seq: &FeatureSequence) -> Result<Tensor> {
        if seq.dim != self.mean.len() {
            return Err(Error::invalid(format!(
                "features have {} dims, normalization expects {}",
                seq.dim,
                self.mean.len()
            )));
        }
        let data = seq
            .values
            .chunks(seq.dim)
            .flat_map(|row| {
                row.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(&v, (m, s))| (f64::from(v) - m) / s)
            })
            .collect();
        Tensor::new(vec![seq.frames, seq.dim], data)
    }
}

const NORM_MEAN: &str = "norm.mean";
const NORM_STD: &str = "norm.std";

/// Trained network: configuration, parameters and input normalization.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub norm: FeatureNorm,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        let norm = FeatureNorm::identity(config.input_dim);
        Ok(Self { config, params, norm })
    }

    /// Dense prediction for one clip (all frames valid).
    pub fn predict(&self, features: &FeatureSequence) -> Result<DensePrediction> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let x = g.constant(self.norm.apply(features)?);
        let mask = vec![true; features.frames];
        let outs = forward(&mut g, &p, &self.config, x, &mask)?;
        Ok(DensePrediction::from_outputs(&g, &outs, features.frames))
    }

    /// Parameters plus the normalization tensors, as written to checkpoints.
    pub fn checkpoint_params(&self) -> ParamStore {
        let mut all = self.params.clone();
        let dim = self.norm.mean.len();
        all.insert(NORM_MEAN, Tensor::new(vec![dim], self.norm.mean.clone()).expect("dim > 0"));
        all.insert(NORM_STD, Tensor::new(vec![dim], self.norm.std.clone()).expect("dim > 0"));
        all
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        store_checkpoint(&self.checkpoint_params(), path)
    }

    /// Restore from a checkpoint; every parameter the config expects must be
    /// present with the expected shape.
    pub fn load(config: ModelConfig, path: impl AsRef<Path>) -> Result<Self> {
        let stored = load_checkpoint(path)?;
        Self::from_checkpoint(config, stored)
    }

    pub fn from_checkpoint(config: ModelConfig, stored: ParamStore) -> Result<Self> {
        let template = init_params(&config, 0)?;
        let mut params = ParamStore::new();
        for (name, t) in template.iter() {
            let found = stored
                .get(name)
                .ok_or_else(|| Error::CorruptFile(format!("checkpoint lacks parameter `{name}`")))?;
            if found.shape() != t.shape() {
                return Err(Error::CorruptFile(format!(
                    "parameter `{name}` has shape {:?}, config expects {:?}",
                    found.shape(),
                    t.shape()
                )));
            }
            params.insert(name.clone(), found.clone());
        }
        let norm = match (stored.get(NORM_MEAN), stored.get(NORM_STD)) {
            (Some(m), Some(s)) if m.numel() == config.input_dim && s.numel() == config.input_dim => FeatureNorm {
                mean: m.data().to_vec(),
                std: s.data().to_vec(),
            },
            (None, None) => FeatureNorm::identity(config.input_dim),
            _ => return Err(Error::CorruptFile("malformed normalization tensors".into())),
        };
        Ok(Self { config, params, norm })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_preset_fits_parameter_budget() {
        let n = parameter_count(&ModelConfig::default());
        assert!(n <= 200_000, "{n} parameters");
        assert_eq!(n, init_params(&ModelConfig::default(), 1).unwrap().num_values());
    }

    #[test]
    fn timestamp_mapping_examples() {
        assert_eq!(map_timestamp(1, 5), 5);
        assert_eq!(map_timestamp(4, 3), 14);
        assert_eq!(map_timestamp(8, 0), 4);
    }

    #[test]
    fn level_length_examples() {
        assert_eq!(level_lengths(64, 4).unwrap(), vec![64, 32, 16, 8]);
        assert_eq!(level_lengths(7, 4).unwrap(), vec![7, 4, 2, 1]);
        assert!(level_lengths(4, 4).is_err());
        assert_eq!(level_lengths(1, 1).unwrap(), vec![1]);
    }
}
