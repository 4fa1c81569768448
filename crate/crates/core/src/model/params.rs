use super::config::ModelConfig;
use crate::autodiff::{ParamStore, Tensor};
use crate::error::Result;
use crate::seeding::rng_from;

/// Prior probability the classification bias is initialized to.
const CLS_PRIOR: f64 = 0.01;
/// Initial localization bias, in stride units.
const LOC_BIAS_INIT: f64 = 2.0;

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Uniform in `±sqrt(3 / fan_in)`.
    Fan(usize),
    Const(f64),
    /// Zero except the forget-gate block, which starts at 1.
    LstmBias,
}

fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, e, h, f, hh, c, k) = (
        cfg.model_dim,
        cfg.input_dim,
        cfg.lstm_hidden,
        cfg.ffn_hidden,
        cfg.head_hidden,
        cfg.num_categories,
        cfg.mdc_kernel,
    );
    let mut out: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));

    add("embed.mdc.w".into(), vec![d, e, k], Init::Fan(e * k));
    for i in 0..cfg.num_levels {
        let p = format!("block{i}");
        for ln in ["ln1", "ln2", "ln3"] {
            add(format!("{p}.{ln}.g"), vec![d], Init::Const(1.0));
            add(format!("{p}.{ln}.b"), vec![d], Init::Const(0.0));
        }
        add(format!("{p}.lstm.w_ih"), vec![d, 4 * h], Init::Fan(d));
        add(format!("{p}.lstm.w_hh"), vec![h, 4 * h], Init::Fan(h));
        add(format!("{p}.lstm.b"), vec![4 * h], Init::LstmBias);
        add(format!("{p}.lstm.proj.w"), vec![h, d], Init::Fan(h));
        add(format!("{p}.lstm.proj.b"), vec![d], Init::Const(0.0));
        add(format!("{p}.attn.qkv.w"), vec![d, 3 * d], Init::Fan(d));
        add(format!("{p}.attn.qkv.b"), vec![3 * d], Init::Const(0.0));
        add(format!("{p}.attn.out.w"), vec![d, d], Init::Fan(d));
        add(format!("{p}.attn.out.b"), vec![d], Init::Const(0.0));
        add(format!("{p}.ffn.w1"), vec![d, f], Init::Fan(d));
        add(format!("{p}.ffn.b1"), vec![f], Init::Const(0.0));
        add(format!("{p}.ffn.w2"), vec![f, d], Init::Fan(f));
        add(format!("{p}.ffn.b2"), vec![d], Init::Const(0.0));
        if i > 0 {
            // depthwise stride-2 downsampling into this level
            add(format!("down{i}.w"), vec![d, 1, 3], Init::Fan(3));
            add(format!("down{i}.b"), vec![d], Init::Const(0.0));
        }
        if cfg.num_levels > 1 {
            add(format!("lateral{i}.w"), vec![d, d], Init::Fan(d));
            add(format!("lateral{i}.b"), vec![d], Init::Const(0.0));
        }
    }
    let prior_logit = (CLS_PRIOR / (1.0 - CLS_PRIOR)).ln();
    for (head, outs, bias) in [("cls", c, prior_logit), ("loc", 2, LOC_BIAS_INIT)] {
        add(format!("{head}.conv1.w"), vec![hh, d, 3], Init::Fan(3 * d));
        add(format!("{head}.conv1.b"), vec![hh], Init::Const(0.0));
        add(format!("{head}.conv2.w"), vec![hh, hh, 3], Init::Fan(3 * hh));
        add(format!("{head}.conv2.b"), vec![hh], Init::Const(0.0));
        for ln in ["ln1", "ln2"] {
            add(format!("{head}.{ln}.g"), vec![hh], Init::Const(1.0));
            add(format!("{head}.{ln}.b"), vec![hh], Init::Const(0.0));
        }
        // small final layer so the bias sets the initial output
        add(format!("{head}.out.w"), vec![outs, hh, 3], Init::Fan(3 * hh * 100));
        add(format!("{head}.out.b"), vec![outs], Init::Const(bias));
    }
    out
}

/// Freshly initialized parameters, deterministic in `seed`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = rng_from(seed);
    let mut store = ParamStore::new();
    for (name, shape, init) in layout(cfg) {
        let t = match init {
            Init::Fan(fan_in) => Tensor::uniform(&shape, (3.0 / fan_in as f64).sqrt(), &mut rng),
            Init::LstmBias => {
                let h = shape[0] / 4;
                let data = (0..shape[0])
                    .map(|j| if (h..2 * h).contains(&j) { 1.0 } else { 0.0 })
                    .collect();
                Tensor::new(shape, data)?
            }
            Init::Const(v) => Tensor::full(&shape, v),
        };
        store.insert(name, t);
    }
    Ok(store)
}

/// Number of trainable scalars for `cfg`.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    layout(cfg).iter().map(|(_, s, _)| s.iter().product::<usize>()).sum()
}
