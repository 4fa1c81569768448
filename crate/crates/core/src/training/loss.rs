use serde::{Deserialize, Serialize};

use super::targets::TargetAssignment;
use crate::autodiff::{focal_value, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::LevelOutput;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the classification term; localization gets `1 - lambda`.
    pub lambda: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig("loss: lambda must lie in [0, 1]".into()));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) || !(self.focal_gamma >= 0.0) {
            return Err(Error::InvalidConfig("loss: need 0 < focal_alpha < 1 and focal_gamma >= 0".into()));
        }
        Ok(())
    }
}

/// Sigmoid focal loss summed over all entries of `logits` against `targets`.
pub fn focal_loss(logits: &[f64], targets: &[f64], alpha: f64, gamma: f64) -> f64 {
    logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| focal_value(z, y, alpha, gamma))
        .sum()
}

/// `1 - DIoU` of two intervals: IoU minus the squared center distance over the
/// squared length of the enclosing interval.
pub fn diou_loss(pred: (f64, f64), gt: (f64, f64)) -> Result<f64> {
    if !(pred.0 < pred.1 && gt.0 < gt.1) {
        return Err(Error::invalid(format!("degenerate interval in DIoU: {pred:?}, {gt:?}")));
    }
    let inter = (pred.1.min(gt.1) - pred.0.max(gt.0)).max(0.0);
    let union = (pred.1 - pred.0) + (gt.1 - gt.0) - inter;
    let enclosing = pred.1.max(gt.1) - pred.0.min(gt.0);
    let rho = (pred.0 + pred.1) / 2.0 - (gt.0 + gt.1) / 2.0;
    Ok(1.0 - (inter / union - rho * rho / (enclosing * enclosing)))
}

/// Summed `1 - DIoU` between intervals anchored at a common point, given as
/// onset/offset distances: `pred` is a `[P, 2]` node, `gt` the matching targets.
pub fn anchored_diou(g: &mut Graph, pred: Var, gt: &[(f64, f64)]) -> Result<Var> {
    let p = gt.len();
    if g.shape(pred) != [p, 2] {
        return Err(Error::invalid("anchored_diou: prediction shape differs from targets"));
    }
    let col = |f: fn(&(f64, f64)) -> f64| Tensor::new(vec![p, 1], gt.iter().map(f).collect());
    let gs = g.constant(col(|d| d.0)?);
    let ge = g.constant(col(|d| d.1)?);
    let gt_len = g.constant(col(|d| d.0 + d.1)?);
    let gt_half_skew = g.constant(col(|d| (d.1 - d.0) / 2.0)?);

    let ps = g.slice(pred, 1, 0, 1)?;
    let pe = g.slice(pred, 1, 1, 2)?;
    let min_s = g.minimum(ps, gs)?;
    let min_e = g.minimum(pe, ge)?;
    let inter = g.add(min_s, min_e)?;
    let p_len = g.add(ps, pe)?;
    let total = g.add(p_len, gt_len)?;
    let union = g.sub(total, inter)?;
    let iou = g.div(inter, union)?;
    let max_s = g.maximum(ps, gs)?;
    let max_e = g.maximum(pe, ge)?;
    let enclosing = g.add(max_s, max_e)?;
    let skew = g.sub(pe, ps)?;
    let half = g.scale(skew, 0.5)?;
    let rho = g.sub(half, gt_half_skew)?;
    let rho2 = g.mul(rho, rho)?;
    let enc2 = g.mul(enclosing, enclosing)?;
    let penalty = g.div(rho2, enc2)?;
    let diou = g.sub(iou, penalty)?;
    let neg = g.scale(diou, -1.0)?;
    let loss = g.add_scalar(neg, 1.0)?;
    g.sum_all(loss)
}

/// `sum_t (lambda * focal_t + (1 - lambda) * I_t * diou_t) / max(T+, 1)`.
pub fn total_loss(g: &mut Graph, outputs: &[LevelOutput], assignment: &TargetAssignment, cfg: &LossConfig) -> Result<Var> {
    if outputs.len() != assignment.levels.len() {
        return Err(Error::invalid("assignment does not match the number of levels"));
    }
    let mut cls_terms = Vec::with_capacity(outputs.len());
    let mut loc_terms = Vec::new();
    for (out, targets) in outputs.iter().zip(&assignment.levels) {
        let n = targets.positive.len();
        if g.shape(out.logits)[0] != n {
            return Err(Error::invalid("assignment does not match level length"));
        }
        let mut focal = g.sigmoid_focal(out.logits, &targets.one_hot, cfg.focal_alpha, cfg.focal_gamma)?;
        if out.mask.iter().any(|&m| !m) {
            let c = g.shape(out.logits)[1];
            let weights = out
                .mask
                .iter()
                .flat_map(|&m| std::iter::repeat_n(if m { 1.0 } else { 0.0 }, c))
                .collect();
            let w = g.constant(Tensor::new(vec![n, c], weights)?);
            focal = g.mul(focal, w)?;
        }
        cls_terms.push(g.sum_all(focal)?);

        let rows: Vec<usize> = (0..n).filter(|&t| targets.positive[t] && out.mask[t]).collect();
        if !rows.is_empty() {
            let pred = g.gather_rows(out.distances, &rows)?;
            let gt: Vec<(f64, f64)> = rows.iter().map(|&t| targets.regression[t]).collect();
            loc_terms.push(anchored_diou(g, pred, &gt)?);
        }
    }
    let cls = sum_vars(g, &cls_terms)?;
    let mut total = g.scale(cls, cfg.lambda)?;
    if !loc_terms.is_empty() {
        let loc = sum_vars(g, &loc_terms)?;
        let loc = g.scale(loc, 1.0 - cfg.lambda)?;
        total = g.add(total, loc)?;
    }
    g.scale(total, 1.0 / assignment.num_positive.max(1) as f64)
}

fn sum_vars(g: &mut Graph, vars: &[Var]) -> Result<Var> {
    let (&first, rest) = vars.split_first().ok_or_else(|| Error::invalid("nothing to sum"))?;
    rest.iter().try_fold(first, |acc, &v| g.add(acc, v))
}
