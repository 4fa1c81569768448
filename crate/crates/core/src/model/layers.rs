use super::config::{level_lengths, level_stride, ModelConfig};
use crate::autodiff::{BoundParams, Graph, Tensor, Var};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const MASKED_SCORE: f64 = -1e9;

/// Zero the rows of a `[T, C]` map where `mask` is false.
pub(crate) fn zero_masked_rows(g: &mut Graph, x: Var, mask: &[bool]) -> Result<Var> {
    if mask.iter().all(|&m| m) {
        return Ok(x);
    }
    let (t, c) = g.value(x).dims2()?;
    if t != mask.len() {
        return Err(Error::invalid(format!("mask length {} for {t} rows", mask.len())));
    }
    let fill: Vec<bool> = mask.iter().flat_map(|&m| std::iter::repeat_n(!m, c)).collect();
    g.mask_fill(x, &fill, 0.0)
}

fn linear(g: &mut Graph, p: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{name}.w"))?;
    let b = p.var(&format!("{name}.b"))?;
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

fn affine_norm(g: &mut Graph, p: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let n = g.layer_norm(x, 1, LN_EPS)?;
    let n = g.mul(n, p.var(&format!("{name}.g"))?)?;
    g.add(n, p.var(&format!("{name}.b"))?)
}

/// Masked difference convolution: `sum_n w_n x(t0 + n) - theta * x(t0) * sum_n w_n`
/// per output channel, with masked frames read as zeros and written as zeros.
/// `x: [T, E]`, `w: [C_out, E, K]` (odd K, same padding).
pub fn mdc_project(g: &mut Graph, x: Var, mask: &[bool], w: Var, theta: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::invalid(format!("mdc theta {theta} outside [0, 1]")));
    }
    let kernel = match g.shape(w) {
        [_, _, k] if k % 2 == 1 => *k,
        s => return Err(Error::invalid(format!("mdc weight must be [C_out, E, odd K], got {s:?}"))),
    };
    let xm = zero_masked_rows(g, x, mask)?;
    let conv = g.conv1d(xm, w, None, 1, kernel / 2, 1, 1)?;
    let out = if theta == 0.0 {
        conv
    } else {
        let wsum = g.sum(w, 2)?; // [C_out, E]
        let wsum_t = g.transpose(wsum)?;
        let center = g.matmul(xm, wsum_t)?;
        let center = g.scale(center, theta)?;
        g.sub(conv, center)?
    };
    zero_masked_rows(g, out, mask)
}

fn lstm_sublayer(g: &mut Graph, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let (t, _) = g.value(x).dims2()?;
    let w_ih = p.var(&format!("{prefix}.w_ih"))?;
    let w_hh = p.var(&format!("{prefix}.w_hh"))?;
    let b = p.var(&format!("{prefix}.b"))?;
    let hidden = g.shape(w_hh)[0];
    let mut h = g.constant(Tensor::zeros(&[1, hidden]));
    let mut c = g.constant(Tensor::zeros(&[1, hidden]));
    let mut outs = Vec::with_capacity(t);
    for step in 0..t {
        let xt = g.slice(x, 0, step, step + 1)?;
        let hc = g.lstm_cell(xt, h, c, w_ih, w_hh, b)?;
        (h, c) = g.lstm_split(hc)?;
        outs.push(h);
    }
    let seq = g.concat(&outs, 0)?;
    linear(g, p, &format!("{prefix}.proj"), seq)
}

fn attention_sublayer(g: &mut Graph, p: &BoundParams, prefix: &str, x: Var, mask: &[bool], heads: usize) -> Result<Var> {
    let (t, d) = g.value(x).dims2()?;
    let dh = d / heads;
    let qkv = linear(g, p, &format!("{prefix}.qkv"), x)?;
    let key_fill: Option<Vec<bool>> = (!mask.iter().all(|&m| m))
        .then(|| (0..t).flat_map(|_| mask.iter().map(|&m| !m)).collect());
    let mut ctx = Vec::with_capacity(heads);
    for head in 0..heads {
        let q = g.slice(qkv, 1, head * dh, (head + 1) * dh)?;
        let k = g.slice(qkv, 1, d + head * dh, d + (head + 1) * dh)?;
        let v = g.slice(qkv, 1, 2 * d + head * dh, 2 * d + (head + 1) * dh)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let mut scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        if let Some(fill) = &key_fill {
            scores = g.mask_fill(scores, fill, MASKED_SCORE)?;
        }
        let attn = g.softmax(scores, 1)?;
        ctx.push(g.matmul(attn, v)?);
    }
    let joined = if heads == 1 { ctx[0] } else { g.concat(&ctx, 1)? };
    linear(g, p, &format!("{prefix}.out"), joined)
}

/// Pre-norm block with residual LSTM, masked self-attention and feed-forward
/// sublayers, in that order. Masked rows are zero on output.
pub fn rtransformer_block(
    g: &mut Graph,
    p: &BoundParams,
    prefix: &str,
    cfg: &ModelConfig,
    x: Var,
    mask: &[bool],
) -> Result<Var> {
    let (t, d) = g.value(x).dims2()?;
    if d != cfg.model_dim || t != mask.len() {
        return Err(Error::invalid(format!(
            "block input {t}x{d} does not match model_dim {} / mask {}",
            cfg.model_dim,
            mask.len()
        )));
    }
    let n1 = affine_norm(g, p, &format!("{prefix}.ln1"), x)?;
    let r1 = lstm_sublayer(g, p, &format!("{prefix}.lstm"), n1)?;
    let x1 = g.add(x, r1)?;

    let n2 = affine_norm(g, p, &format!("{prefix}.ln2"), x1)?;
    let r2 = attention_sublayer(g, p, &format!("{prefix}.attn"), n2, mask, cfg.num_heads)?;
    let x2 = g.add(x1, r2)?;

    let n3 = affine_norm(g, p, &format!("{prefix}.ln3"), x2)?;
    let w1 = p.var(&format!("{prefix}.ffn.w1"))?;
    let b1 = p.var(&format!("{prefix}.ffn.b1"))?;
    let w2 = p.var(&format!("{prefix}.ffn.w2"))?;
    let b2 = p.var(&format!("{prefix}.ffn.b2"))?;
    let hdn = g.matmul(n3, w1)?;
    let hdn = g.add(hdn, b1)?;
    let hdn = g.relu(hdn)?;
    let r3 = g.matmul(hdn, w2)?;
    let r3 = g.add(r3, b2)?;
    let x3 = g.add(x2, r3)?;
    zero_masked_rows(g, x3, mask)
}

/// One pyramid level: fused map, validity mask and cumulative stride.
#[derive(Debug, Clone)]
pub struct PyramidLevel {
    pub map: Var,
    pub mask: Vec<bool>,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: Vec<PyramidLevel>,
}

impl FeaturePyramid {
    pub fn lengths(&self, g: &Graph) -> Vec<usize> {
        self.levels.iter().map(|l| g.shape(l.map)[0]).collect()
    }
}

/// Any-true pooling over windows of two.
pub fn pool_mask(mask: &[bool]) -> Vec<bool> {
    mask.chunks(2).map(|w| w.iter().any(|&m| m)).collect()
}

/// Bottom-up blocks with stride-2 depthwise downsampling, then top-down fusion
/// by nearest upsampling plus 1x1 lateral projections.
pub fn build_pyramid(g: &mut Graph, p: &BoundParams, cfg: &ModelConfig, x: Var, mask: &[bool]) -> Result<FeaturePyramid> {
    let (t, _) = g.value(x).dims2()?;
    let lengths = level_lengths(t, cfg.num_levels)?;
    let mut masks = vec![mask.to_vec()];
    let mut bottom_up = Vec::with_capacity(cfg.num_levels);
    let mut cur = rtransformer_block(g, p, "block0", cfg, x, mask)?;
    bottom_up.push(cur);
    for i in 1..cfg.num_levels {
        let w = p.var(&format!("down{i}.w"))?;
        let b = p.var(&format!("down{i}.b"))?;
        let down = g.conv1d(cur, w, Some(b), 2, 1, 1, cfg.model_dim)?;
        let m = pool_mask(&masks[i - 1]);
        debug_assert_eq!(m.len(), lengths[i]);
        let down = zero_masked_rows(g, down, &m)?;
        cur = rtransformer_block(g, p, &format!("block{i}"), cfg, down, &m)?;
        bottom_up.push(cur);
        masks.push(m);
    }
    if cfg.num_levels == 1 {
        return Ok(FeaturePyramid {
            levels: vec![PyramidLevel {
                map: bottom_up[0],
                mask: masks.remove(0),
                stride: 1,
            }],
        });
    }
    let mut fused: Vec<Var> = vec![bottom_up[0]; cfg.num_levels];
    let top = cfg.num_levels - 1;
    fused[top] = linear(g, p, &format!("lateral{top}"), bottom_up[top])?;
    fused[top] = zero_masked_rows(g, fused[top], &masks[top])?;
    for i in (0..top).rev() {
        let up = g.nearest_upsample_1d(fused[i + 1], 2)?;
        let up = g.slice(up, 0, 0, lengths[i])?;
        let lat = linear(g, p, &format!("lateral{i}"), bottom_up[i])?;
        let sum = g.add(lat, up)?;
        fused[i] = zero_masked_rows(g, sum, &masks[i])?;
    }
    Ok(FeaturePyramid {
        levels: fused
            .into_iter()
            .zip(masks)
            .enumerate()
            .map(|(i, (map, mask))| PyramidLevel {
                map,
                mask,
                stride: level_stride(i),
            })
            .collect(),
    })
}

/// Per-level head outputs: logits `[T_i, C]` and distances `[T_i, 2]` in
/// embedded-frame units.
#[derive(Debug, Clone)]
pub struct LevelOutput {
    pub logits: Var,
    pub distances: Var,
    pub stride: usize,
    pub mask: Vec<bool>,
}

fn conv_head(g: &mut Graph, p: &BoundParams, head: &str, x: Var) -> Result<Var> {
    let mut h = x;
    for layer in 1..=2 {
        let w = p.var(&format!("{head}.conv{layer}.w"))?;
        let b = p.var(&format!("{head}.conv{layer}.b"))?;
        h = g.conv1d(h, w, Some(b), 1, 1, 1, 1)?;
        h = affine_norm(g, p, &format!("{head}.ln{layer}"), h)?;
        h = g.relu(h)?;
    }
    let w = p.var(&format!("{head}.out.w"))?;
    let b = p.var(&format!("{head}.out.b"))?;
    g.conv1d(h, w, Some(b), 1, 1, 1, 1)
}

/// Classification and localization heads, shared across levels. Distances
/// pass through relu and are scaled by the level stride.
pub fn predict_heads(g: &mut Graph, p: &BoundParams, pyramid: &FeaturePyramid) -> Result<Vec<LevelOutput>> {
    pyramid
        .levels
        .iter()
        .map(|level| {
            let logits = conv_head(g, p, "cls", level.map)?;
            let raw = conv_head(g, p, "loc", level.map)?;
            let dist = g.relu(raw)?;
            let distances = g.scale(dist, level.stride as f64)?;
            Ok(LevelOutput {
                logits,
                distances,
                stride: level.stride,
                mask: level.mask.clone(),
            })
        })
        .collect()
}

/// Full network on a `[T, E]` input.
pub fn forward(g: &mut Graph, p: &BoundParams, cfg: &ModelConfig, x: Var, mask: &[bool]) -> Result<Vec<LevelOutput>> {
    let (t, e) = g.value(x).dims2()?;
    if e != cfg.input_dim || t != mask.len() {
        return Err(Error::invalid(format!(
            "input {t}x{e} does not match input_dim {} / mask {}",
            cfg.input_dim,
            mask.len()
        )));
    }
    let w = p.var("embed.mdc.w")?;
    let projected = mdc_project(g, x, mask, w, cfg.mdc_theta)?;
    let pyramid = build_pyramid(g, p, cfg, projected, mask)?;
    predict_heads(g, p, &pyramid)
}
