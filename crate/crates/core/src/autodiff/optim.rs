use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
        }
    }
}

/// First/second moment estimates per parameter plus the step counter.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One AdamW update with decoupled weight decay, using `config.lr` as the step size.
pub fn adamw_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimizerState,
    config: &AdamWConfig,
) -> Result<()> {
    if config.lr < 0.0 {
        return Err(Error::invalid("learning rate must be nonnegative"));
    }
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::invalid(format!("no gradient for `{name}`")))?;
        if g.shape() != p.shape() {
            return Err(Error::invalid(format!(
                "gradient shape {:?} differs from parameter `{name}` shape {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let decay = 1.0 - config.lr * config.weight_decay;
    for (name, p) in params.iter_mut() {
        let g = grads[name.as_str()].data();
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
            v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *w = *w * decay - config.lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

/// Linear warmup from 0 to `base_lr`, then cosine decay to 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, base_lr: f64) -> f64 {
    if step < warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(warmup_steps).max(1);
    let progress = ((step - warmup_steps) as f64 / span as f64).min(1.0);
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(value));
        p
    }

    fn grad(value: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w".to_string(), Tensor::scalar(value))])
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut p = single(0.7);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        adamw_step(&mut p, &grad(0.0), &mut OptimizerState::new(), &cfg).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 0.7);
    }

    #[test]
    fn zero_gradient_applies_decoupled_decay() {
        let mut p = single(2.0);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        adamw_step(&mut p, &grad(0.0), &mut OptimizerState::new(), &cfg).unwrap();
        assert!((p.get("w").unwrap().item() - 2.0 * (1.0 - 0.1 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = 1, v_hat = 1 after bias correction, so the step is lr / (1 + eps)
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = single(1.0);
        adamw_step(&mut p, &grad(1.0), &mut OptimizerState::new(), &cfg).unwrap();
        let moved = 1.0 - p.get("w").unwrap().item();
        assert!((moved - cfg.lr / (1.0 + cfg.eps)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = single(1.0);
        let g = BTreeMap::from([("w".to_string(), Tensor::zeros(&[2]))]);
        let err = adamw_step(&mut p, &g, &mut OptimizerState::new(), &AdamWConfig::default());
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn identical_steps_are_bit_reproducible() {
        let run = || {
            let mut p = single(0.3);
            let mut s = OptimizerState::new();
            for k in 0..5 {
                adamw_step(&mut p, &grad(0.1 * k as f64 - 0.2), &mut s, &AdamWConfig::default()).unwrap();
            }
            p.get("w").unwrap().item().to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn schedule_landmarks() {
        let (total, warmup, base) = (100, 10, 1e-3);
        assert_eq!(lr_at(0, total, warmup, base), 0.0);
        assert_eq!(lr_at(warmup, total, warmup, base), base);
        assert!((lr_at(55, total, warmup, base) - base / 2.0).abs() < 1e-15);
        assert!(lr_at(total, total, warmup, base).abs() < 1e-18);
        assert!((lr_at(5, total, warmup, base) - base / 2.0).abs() < 1e-18);
    }
}
