use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{total_loss, LossConfig};
use super::targets::{assign_targets, PyramidGeometry, TargetAssignment};
use crate::autodiff::{adamw_step, lr_at, AdamWConfig, Graph, OptimizerState, Tensor};
use crate::corpus::SpanLabel;
use crate::error::{Error, Result};
use crate::features::{FeatureSequence, FrameSpec};
use crate::model::{forward, FeatureNorm, Model, ModelConfig};
use crate::seeding::{derive_seed, rng_from};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub lambda: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            seed: 0,
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            warmup_epochs: 5,
            lambda: 0.5,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("train: epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("train: learning_rate and weight_decay must be nonnegative".into()));
        }
        self.loss().validate()
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            focal_alpha: self.focal_alpha,
            focal_gamma: self.focal_gamma,
        }
    }
}

/// One training example: features plus ground-truth spans.
#[derive(Debug, Clone)]
pub struct TrainingClip {
    pub clip_id: String,
    pub features: FeatureSequence,
    pub spans: Vec<SpanLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-clip loss over the epoch, measured before each update.
    pub loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub seed: u64,
    pub config: serde_json::Value,
}

struct Prepared {
    input: Tensor,
    mask: Vec<bool>,
    targets: TargetAssignment,
}

fn prepare(clips: &[TrainingClip], model: &Model, spec: &FrameSpec) -> Result<Vec<Prepared>> {
    let ranges = model.config.level_ranges();
    clips
        .iter()
        .map(|clip| {
            let geometry = PyramidGeometry::new(clip.features.frames, model.config.num_levels)?;
            let targets = assign_targets(&geometry, &clip.spans, spec, &ranges, model.config.num_categories)?;
            Ok(Prepared {
                input: model.norm.apply(&clip.features)?,
                mask: vec![true; clip.features.frames],
                targets,
            })
        })
        .collect()
}

/// Loss and parameter gradients for one clip.
fn clip_step(model: &Model, item: &Prepared, loss_cfg: &LossConfig) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g);
    let x = g.constant(item.input.clone());
    let outs = forward(&mut g, &p, &model.config, x, &item.mask)?;
    let loss = total_loss(&mut g, &outs, &item.targets, loss_cfg)?;
    let value = g.value(loss).item();
    let grads = g.backward(loss)?;
    Ok((value, p.grads(&grads)))
}

/// Mean loss of `model` over `clips` without updating anything.
pub fn evaluate_loss(model: &Model, clips: &[TrainingClip], spec: &FrameSpec, loss_cfg: &LossConfig) -> Result<f64> {
    let prepared = prepare(clips, model, spec)?;
    let mut total = 0.0;
    for item in &prepared {
        let mut g = Graph::new();
        let p = model.params.bind_frozen(&mut g);
        let x = g.constant(item.input.clone());
        let outs = forward(&mut g, &p, &model.config, x, &item.mask)?;
        let loss = total_loss(&mut g, &outs, &item.targets, loss_cfg)?;
        total += g.value(loss).item();
    }
    Ok(total / prepared.len().max(1) as f64)
}

/// Train from scratch: fit input normalization on `clips`, then run
/// `epochs` passes of shuffled mini-batches with AdamW under linear warmup
/// and cosine decay. `on_epoch` sees the model after every epoch.
pub fn train_with<F>(
    clips: &[TrainingClip],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    spec: &FrameSpec,
    mut on_epoch: F,
) -> Result<(Model, TrainLog)>
where
    F: FnMut(&EpochRecord, &Model),
{
    cfg.validate()?;
    model_cfg.validate()?;
    if clips.is_empty() {
        return Err(Error::InvalidConfig("training split is empty".into()));
    }
    if let Some(c) = clips.iter().find(|c| c.features.dim != model_cfg.input_dim) {
        return Err(Error::InvalidConfig(format!(
            "clip `{}` has {}-dim features, model expects {}",
            c.clip_id, c.features.dim, model_cfg.input_dim
        )));
    }
    let mut model = Model::new(model_cfg.clone(), derive_seed(cfg.seed, 0))?;
    model.norm = FeatureNorm::fit(clips.iter().map(|c| &c.features))?;
    let prepared = prepare(clips, &model, spec)?;

    let steps_per_epoch = clips.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let warmup_steps = steps_per_epoch * cfg.warmup_epochs;
    let mut state = OptimizerState::new();
    let mut opt = AdamWConfig {
        lr: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    };
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut step = 0usize;
    let loss_cfg = cfg.loss();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng_from(derive_seed(cfg.seed, epoch as u64)));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
            for &i in batch {
                let (loss, grads) = clip_step(&model, &prepared[i], &loss_cfg)?;
                loss_sum += loss;
                for (name, gt) in grads {
                    match acc.get_mut(&name) {
                        Some(a) => a.data_mut().iter_mut().zip(gt.data()).for_each(|(x, y)| *x += y),
                        None => {
                            acc.insert(name, gt);
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for t in acc.values_mut() {
                t.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            step += 1;
            opt.lr = lr_at(step, total_steps, warmup_steps, cfg.learning_rate);
            adamw_step(&mut model.params, &acc, &mut state, &opt)?;
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / clips.len() as f64,
            lr: opt.lr,
        };
        log::info!("epoch {epoch}: loss {:.5}, lr {:.2e}", record.loss, record.lr);
        on_epoch(&record, &model);
        records.push(record);
    }
    let log = TrainLog {
        epochs: records,
        seed: cfg.seed,
        config: serde_json::json!({ "model": model_cfg, "train": cfg }),
    };
    Ok((model, log))
}

pub fn train(clips: &[TrainingClip], model_cfg: &ModelConfig, cfg: &TrainConfig, spec: &FrameSpec) -> Result<(Model, TrainLog)> {
    train_with(clips, model_cfg, cfg, spec, |_, _| {})
}
