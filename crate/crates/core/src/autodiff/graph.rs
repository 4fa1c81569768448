//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to the [`Graph`]; nodes are therefore stored in
//! topological order and [`Graph::backward`] walks them once in reverse.

use super::kernels::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy)]
enum UnaryKind {
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Power(f64),
    Scale(f64),
    AddScalar(f64),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(BinaryKind, Var, Var),
    Unary(UnaryKind, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, axis: usize, inv_std: Vec<f64> },
    Sum { x: Var, axis: usize, mean: bool },
    SumAll(Var),
    Conv1d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Upsample { x: Var, factor: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    MaskFill { x: Var, mask: Vec<bool> },
    GatherRows { x: Var, rows: Vec<usize> },
    LstmCell(Box<LstmSaved>),
    SigmoidFocal { x: Var, targets: Vec<f64>, alpha: f64, gamma: f64 },
}

#[derive(Debug)]
struct LstmSaved {
    x: Var,
    h: Var,
    c: Var,
    w_ih: Var,
    w_hh: Var,
    b: Var,
    // gate activations [B, 4H] in order i, f, g, o, and tanh(c') [B, H]
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Binary(_, a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Unary(_, x)
            | Op::Transpose(x)
            | Op::SumAll(x)
            | Op::Softmax { x, .. }
            | Op::LayerNorm { x, .. }
            | Op::Sum { x, .. }
            | Op::Upsample { x, .. }
            | Op::Slice { x, .. }
            | Op::MaskFill { x, .. }
            | Op::GatherRows { x, .. }
            | Op::SigmoidFocal { x, .. } => vec![*x],
            Op::Conv1d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::Concat { xs, .. } => xs.clone(),
            Op::LstmCell(s) => vec![s.x, s.h, s.c, s.w_ih, s.w_hh, s.b],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-use computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that requires them.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not influence the root.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.shapes[v.0].clone(), g.clone()).ok()
    }

    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that receives gradients.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, name: &'static str) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { op: name });
        }
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        let value = Tensor::new(shape, data)?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // ---------------------------------------------------------------- elementwise

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var, name: &'static str) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b));
        if !broadcast_ok(&sa, sb) {
            return Err(Error::invalid(format!(
                "{name}: shape {sb:?} does not broadcast onto {sa:?}"
            )));
        }
        let (xa, xb) = (self.data(a), self.data(b));
        let nb = xb.len();
        let out = xa
            .iter()
            .enumerate()
            .map(|(i, &u)| {
                let v = xb[i % nb];
                match kind {
                    BinaryKind::Add => u + v,
                    BinaryKind::Sub => u - v,
                    BinaryKind::Mul => u * v,
                    BinaryKind::Div => u / v,
                    BinaryKind::Min => u.min(v),
                    BinaryKind::Max => u.max(v),
                }
            })
            .collect();
        self.push(sa, out, Op::Binary(kind, a, b), name)
    }

    /// `a + b`, with `b` broadcast over leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b, "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b, "div")
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Min, a, b, "minimum")
    }

    /// Elementwise maximum; ties send the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Max, a, b, "maximum")
    }

    fn unary(&mut self, kind: UnaryKind, x: Var, name: &'static str) -> Result<Var> {
        let out = self
            .data(x)
            .iter()
            .map(|&u| match kind {
                UnaryKind::Relu => u.max(0.0),
                UnaryKind::Sigmoid => kernels::sigmoid(u),
                UnaryKind::Tanh => u.tanh(),
                UnaryKind::Exp => u.exp(),
                UnaryKind::Log => u.ln(),
                UnaryKind::Power(p) => u.powf(p),
                UnaryKind::Scale(c) => u * c,
                UnaryKind::AddScalar(c) => u + c,
            })
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Unary(kind, x), name)
    }

    /// Rectifier; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, x, "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, x, "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Tanh, x, "tanh")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, x, "exp")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, x, "log")
    }

    /// `x^p` for a constant exponent.
    pub fn power(&mut self, x: Var, p: f64) -> Result<Var> {
        self.unary(UnaryKind::Power(p), x, "power")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(UnaryKind::Scale(c), x, "scale")
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(UnaryKind::AddScalar(c), x, "add_scalar")
    }

    // ---------------------------------------------------------------- linear algebra

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::invalid(format!(
                "matmul: inner extents differ ({m}x{k} * {k2}x{n})"
            )));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.data(a), self.data(b), &mut out, m, k, n);
        self.push(vec![m, n], out, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let src = self.data(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push(vec![c, r], out, Op::Transpose(x), "transpose")
    }

    fn check_axis(&self, x: Var, axis: usize, name: &str) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(Error::invalid(format!(
                "{name}: axis {axis} out of range for shape {:?}",
                self.shape(x)
            )));
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "softmax")?;
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = kernels::split_axis(&shape, axis);
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    out[idx(j)] /= total;
                }
            }
        }
        self.push(shape, out, Op::Softmax { x, axis }, "softmax")
    }

    /// Normalize to zero mean and unit variance along `axis` (no affine part).
    pub fn layer_norm(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        self.check_axis(x, axis, "layer_norm")?;
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = kernels::split_axis(&shape, axis);
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let mean = (0..n).map(|j| src[idx(j)]).sum::<f64>() / n as f64;
                let var = (0..n).map(|j| (src[idx(j)] - mean).powi(2)).sum::<f64>() / n as f64;
                let r = 1.0 / (var + eps).sqrt();
                inv_std[o * inner + i] = r;
                for j in 0..n {
                    out[idx(j)] = (src[idx(j)] - mean) * r;
                }
            }
        }
        self.push(shape, out, Op::LayerNorm { x, axis, inv_std }, "layer_norm")
    }

    fn reduce(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let name = if mean { "mean" } else { "sum" };
        self.check_axis(x, axis, name)?;
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = kernels::split_axis(&shape, axis);
        let src = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += src[(o * n + j) * inner + i];
                }
            }
        }
        if mean {
            out.iter_mut().for_each(|v| *v /= n as f64);
        }
        let mut out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|&(d, _)| d != axis)
            .map(|(_, &e)| e)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        self.push(out_shape, out, Op::Sum { x, axis, mean }, name)
    }

    /// Sum along `axis`, removing it.
    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, axis, false)
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, axis, true)
    }

    /// Sum of every element, as a `[1]` tensor.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let total = self.data(x).iter().sum();
        self.push(vec![1], vec![total], Op::SumAll(x), "sum_all")
    }

    // ---------------------------------------------------------------- sequence ops

    /// 1-D convolution over a time-major `[T, C_in]` input with weight
    /// `[C_out, C_in / groups, K]` and optional bias `[C_out]`; returns `[T_out, C_out]`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        dilation: usize,
        groups: usize,
    ) -> Result<Var> {
        let (t_in, c_in) = self.value(x).dims2()?;
        let (c_out, cin_g, kernel) = match self.shape(w) {
            [o, i, k] => (*o, *i, *k),
            s => return Err(Error::invalid(format!("conv1d: weight must be rank 3, got {s:?}"))),
        };
        if stride == 0 || dilation == 0 || groups == 0 {
            return Err(Error::invalid("conv1d: stride, dilation and groups must be positive"));
        }
        if c_in % groups != 0 || c_out % groups != 0 || cin_g * groups != c_in {
            return Err(Error::invalid(format!(
                "conv1d: channels {c_in}->{c_out} incompatible with groups {groups} and weight {:?}",
                self.shape(w)
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::invalid("conv1d: bias must be [C_out]"));
            }
        }
        let span = dilation * (kernel - 1) + 1;
        if t_in + 2 * padding < span {
            return Err(Error::invalid("conv1d: input shorter than the kernel span"));
        }
        let t_out = (t_in + 2 * padding - span) / stride + 1;
        let geom = ConvGeom {
            t_in,
            t_out,
            c_in,
            c_out,
            kernel,
            stride,
            padding,
            dilation,
            groups,
        };
        let (cout_g, width) = (geom.cout_g(), kernel * cin_g);
        let mut out = vec![0.0; t_out * c_out];
        let xd = self.data(x);
        let wd = self.data(w);
        let mut tmp = vec![0.0; t_out * cout_g];
        for g in 0..groups {
            let cols = geom.im2col(xd, g);
            let wm = geom.weight_matrix(wd, g);
            tmp.iter_mut().for_each(|v| *v = 0.0);
            kernels::matmul_acc(&cols, &wm, &mut tmp, t_out, width, cout_g);
            for to in 0..t_out {
                out[to * c_out + g * cout_g..to * c_out + (g + 1) * cout_g]
                    .copy_from_slice(&tmp[to * cout_g..(to + 1) * cout_g]);
            }
        }
        if let Some(b) = b {
            let bd = self.data(b);
            for row in out.chunks_mut(c_out) {
                for (o, bv) in row.iter_mut().zip(bd) {
                    *o += bv;
                }
            }
        }
        self.push(vec![t_out, c_out], out, Op::Conv1d { x, w, b, geom }, "conv1d")
    }

    /// Repeat each row of a `[T, C]` map `factor` times.
    pub fn nearest_upsample_1d(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (t, c) = self.value(x).dims2()?;
        if factor == 0 {
            return Err(Error::invalid("upsample factor must be positive"));
        }
        let src = self.data(x);
        let mut out = Vec::with_capacity(t * factor * c);
        for i in 0..t {
            for _ in 0..factor {
                out.extend_from_slice(&src[i * c..(i + 1) * c]);
            }
        }
        self.push(vec![t * factor, c], out, Op::Upsample { x, factor }, "nearest_upsample_1d")
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        self.check_axis(*first, axis, "concat")?;
        let base = self.shape(*first).to_vec();
        for &v in xs {
            let s = self.shape(v);
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(Error::invalid(format!(
                    "concat: shape {s:?} incompatible with {base:?} along axis {axis}"
                )));
            }
        }
        let (outer, _, inner) = kernels::split_axis(&base, axis);
        let total: usize = xs.iter().map(|&v| self.shape(v)[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let n = self.shape(v)[axis];
                out.extend_from_slice(&self.data(v)[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(shape, out, Op::Concat { xs: xs.to_vec(), axis }, "concat")
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.check_axis(x, axis, "slice")?;
        let shape = self.shape(x).to_vec();
        if start >= end || end > shape[axis] {
            return Err(Error::invalid(format!(
                "slice {start}..{end} invalid for extent {}",
                shape[axis]
            )));
        }
        let (outer, n, inner) = kernels::split_axis(&shape, axis);
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        self.push(out_shape, out, Op::Slice { x, axis, start }, "slice")
    }

    /// Replace elements where `mask` is true by `value`; `mask` has one entry per element.
    pub fn mask_fill(&mut self, x: Var, mask: &[bool], value: f64) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(Error::invalid("mask_fill: mask length differs from element count"));
        }
        let out = self
            .data(x)
            .iter()
            .zip(mask)
            .map(|(&u, &m)| if m { value } else { u })
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::MaskFill { x, mask: mask.to_vec() }, "mask_fill")
    }

    /// Select rows (first-axis entries) by index.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if rows.is_empty() || rows.iter().any(|&r| r >= shape[0]) {
            return Err(Error::invalid("gather_rows: empty or out-of-range index"));
        }
        let width: usize = shape[1..].iter().product();
        let src = self.data(x);
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            out.extend_from_slice(&src[r * width..(r + 1) * width]);
        }
        let mut out_shape = shape;
        out_shape[0] = rows.len();
        self.push(out_shape, out, Op::GatherRows { x, rows: rows.to_vec() }, "gather_rows")
    }

    /// One LSTM step. `x: [B, I]`, `h, c: [B, H]`, `w_ih: [I, 4H]`, `w_hh: [H, 4H]`, `b: [4H]`,
    /// gates ordered input, forget, cell, output. Returns `[B, 2H]` holding `h'` then `c'`;
    /// see [`Graph::lstm_split`].
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, b: Var) -> Result<Var> {
        let (batch, input) = self.value(x).dims2()?;
        let (hb, hidden) = self.value(h).dims2()?;
        let ok = hb == batch
            && self.shape(c) == [batch, hidden]
            && self.shape(w_ih) == [input, 4 * hidden]
            && self.shape(w_hh) == [hidden, 4 * hidden]
            && self.shape(b) == [4 * hidden];
        if !ok {
            return Err(Error::invalid("lstm_cell: incompatible shapes"));
        }
        let h4 = 4 * hidden;
        let mut z = vec![0.0; batch * h4];
        kernels::matmul_acc(self.data(x), self.data(w_ih), &mut z, batch, input, h4);
        kernels::matmul_acc(self.data(h), self.data(w_hh), &mut z, batch, hidden, h4);
        let bd = self.data(b);
        let cd = self.data(c);
        let mut gates = vec![0.0; batch * h4];
        let mut tanh_c = vec![0.0; batch * hidden];
        let mut out = vec![0.0; batch * 2 * hidden];
        for r in 0..batch {
            for j in 0..hidden {
                let zr = &z[r * h4..(r + 1) * h4];
                let i = kernels::sigmoid(zr[j] + bd[j]);
                let f = kernels::sigmoid(zr[hidden + j] + bd[hidden + j]);
                let g = (zr[2 * hidden + j] + bd[2 * hidden + j]).tanh();
                let o = kernels::sigmoid(zr[3 * hidden + j] + bd[3 * hidden + j]);
                let c_new = f * cd[r * hidden + j] + i * g;
                let tc = c_new.tanh();
                let gr = &mut gates[r * h4..(r + 1) * h4];
                gr[j] = i;
                gr[hidden + j] = f;
                gr[2 * hidden + j] = g;
                gr[3 * hidden + j] = o;
                tanh_c[r * hidden + j] = tc;
                out[r * 2 * hidden + j] = o * tc;
                out[r * 2 * hidden + hidden + j] = c_new;
            }
        }
        let saved = LstmSaved {
            x,
            h,
            c,
            w_ih,
            w_hh,
            b,
            gates,
            tanh_c,
        };
        self.push(vec![batch, 2 * hidden], out, Op::LstmCell(Box::new(saved)), "lstm_cell")
    }

    /// Split the output of [`Graph::lstm_cell`] into `(h', c')`.
    pub fn lstm_split(&mut self, hc: Var) -> Result<(Var, Var)> {
        let (_, w) = self.value(hc).dims2()?;
        let hidden = w / 2;
        Ok((self.slice(hc, 1, 0, hidden)?, self.slice(hc, 1, hidden, w)?))
    }

    /// Elementwise sigmoid focal loss of logits against constant targets in `[0, 1]`:
    /// `-alpha (1-p)^gamma log p` for the positive part and
    /// `-(1-alpha) p^gamma log(1-p)` for the negative part.
    pub fn sigmoid_focal(&mut self, x: Var, targets: &[f64], alpha: f64, gamma: f64) -> Result<Var> {
        if targets.len() != self.value(x).numel() {
            return Err(Error::invalid("sigmoid_focal: target count differs from logits"));
        }
        let out = self
            .data(x)
            .iter()
            .zip(targets)
            .map(|(&z, &y)| focal_value(z, y, alpha, gamma))
            .collect();
        let shape = self.shape(x).to_vec();
        let op = Op::SigmoidFocal {
            x,
            targets: targets.to_vec(),
            alpha,
            gamma,
        };
        self.push(shape, out, op, "sigmoid_focal")
    }

    // ---------------------------------------------------------------- backward

    /// Reverse pass from a single-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).numel() != 1 {
            return Err(Error::invalid("backward root must hold exactly one element"));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
        }
        let shapes = self.nodes[..n].iter().map(|nd| nd.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let node = &self.nodes[i];
        let y = node.value.data();
                match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (xa, xb) = (self.data(*a), self.data(*b));
                let nb = xb.len();
                if let Some(ga) = acc(nodes, grads, *a) {
                    for (k, gk) in g.iter().enumerate() {
                        let (u, v) = (xa[k], xb[k % nb]);
                        ga[k] += gk * match kind {
                            BinaryKind::Add | BinaryKind::Sub => 1.0,
                            BinaryKind::Mul => v,
                            BinaryKind::Div => 1.0 / v,
                            BinaryKind::Min => f64::from(u <= v),
                            BinaryKind::Max => f64::from(u >= v),
                        };
                    }
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    for (k, gk) in g.iter().enumerate() {
                        let (u, v) = (xa[k], xb[k % nb]);
                        gb[k % nb] += gk * match kind {
                            BinaryKind::Add => 1.0,
                            BinaryKind::Sub => -1.0,
                            BinaryKind::Mul => u,
                            BinaryKind::Div => -u / (v * v),
                            BinaryKind::Min => f64::from(u > v),
                            BinaryKind::Max => f64::from(u < v),
                        };
                    }
                }
            }
            Op::Unary(kind, x) => {
                let xs = self.data(*x);
                if let Some(gx) = acc(nodes, grads, *x) {
                    for k in 0..g.len() {
                        let (u, out) = (xs[k], y[k]);
                        gx[k] += g[k] * match kind {
                            UnaryKind::Relu => f64::from(u > 0.0),
                            UnaryKind::Sigmoid => out * (1.0 - out),
                            UnaryKind::Tanh => 1.0 - out * out,
                            UnaryKind::Exp => out,
                            UnaryKind::Log => 1.0 / u,
                            UnaryKind::Power(p) => p * u.powf(p - 1.0),
                            UnaryKind::Scale(c) => *c,
                            UnaryKind::AddScalar(_) => 1.0,
                        };
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().expect("matmul lhs");
                let (_, n) = self.value(*b).dims2().expect("matmul rhs");
                let (ad, bd) = (self.data(*a), self.data(*b));
                if let Some(ga) = acc(nodes, grads, *a) {
                    kernels::matmul_nt_acc(g, bd, ga, m, k, n);
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    kernels::matmul_tn_acc(ad, g, gb, m, k, n);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2().expect("transpose");
                if let Some(gx) = acc(nodes, grads, *x) {
                    for a in 0..r {
                        for b in 0..c {
                            gx[a * c + b] += g[b * r + a];
                        }
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = kernels::split_axis(node.value.shape(), *axis);
                if let Some(gx) = acc(nodes, grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * n + j) * inner + i;
                            let dot: f64 = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..n {
                                gx[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, axis, inv_std } => {
                let (outer, n, inner) = kernels::split_axis(node.value.shape(), *axis);
                if let Some(gx) = acc(nodes, grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * n + j) * inner + i;
                            let gm = (0..n).map(|j| g[idx(j)]).sum::<f64>() / n as f64;
                            let gy = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum::<f64>() / n as f64;
                            let r = inv_std[o * inner + i];
                            for j in 0..n {
                                gx[idx(j)] += r * (g[idx(j)] - gm - y[idx(j)] * gy);
                            }
                        }
                    }
                }
            }
            Op::Sum { x, axis, mean } => {
                let (outer, n, inner) = kernels::split_axis(self.shape(*x), *axis);
                let s = if *mean { 1.0 / n as f64 } else { 1.0 };
                if let Some(gx) = acc(nodes, grads, *x) {
                    for o in 0..outer {
                        for j in 0..n {
                            for i in 0..inner {
                                gx[(o * n + j) * inner + i] += s * g[o * inner + i];
                            }
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(gx) = acc(nodes, grads, *x) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Conv1d { x, w, b, geom } => {
                let (cout_g, width, c_out) = (geom.cout_g(), geom.kernel * geom.cin_g(), geom.c_out);
                let (xd, wd) = (self.data(*x), self.data(*w));
                let mut gg = vec![0.0; geom.t_out * cout_g];
                for grp in 0..geom.groups {
                    for to in 0..geom.t_out {
                        gg[to * cout_g..(to + 1) * cout_g]
                            .copy_from_slice(&g[to * c_out + grp * cout_g..to * c_out + (grp + 1) * cout_g]);
                    }
                    if let Some(gw) = acc(nodes, grads, *w) {
                        let cols = geom.im2col(xd, grp);
                        let mut gm = vec![0.0; width * cout_g];
                        kernels::matmul_tn_acc(&cols, &gg, &mut gm, geom.t_out, width, cout_g);
                        geom.weight_matrix_acc(&gm, grp, gw);
                    }
                    if let Some(gx) = acc(nodes, grads, *x) {
                        let wm = geom.weight_matrix(wd, grp);
                        let mut gcols = vec![0.0; geom.t_out * width];
                        kernels::matmul_nt_acc(&gg, &wm, &mut gcols, geom.t_out, width, cout_g);
                        geom.col2im_acc(&gcols, grp, gx);
                    }
                }
                if let Some(b) = b {
                    if let Some(gb) = acc(nodes, grads, *b) {
                        for row in g.chunks(c_out) {
                            for (acc, v) in gb.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                    }
                }
            }
            Op::Upsample { x, factor } => {
                let (t, c) = self.value(*x).dims2().expect("upsample");
                if let Some(gx) = acc(nodes, grads, *x) {
                    for i in 0..t {
                        for r in 0..*factor {
                            let src = &g[(i * factor + r) * c..(i * factor + r + 1) * c];
                            for (d, s) in gx[i * c..(i + 1) * c].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = kernels::split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let n = self.shape(v)[*axis];
                    if let Some(gv) = acc(nodes, grads, v) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + n) * inner];
                            for (d, s) in gv[o * n * inner..(o + 1) * n * inner].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = kernels::split_axis(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                if let Some(gx) = acc(nodes, grads, *x) {
                    for o in 0..outer {
                        let dst = &mut gx[(o * n + start) * inner..(o * n + start + len) * inner];
                        for (d, s) in dst.iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]) {
                            *d += s;
                        }
                    }
                }
            }
            Op::MaskFill { x, mask } => {
                if let Some(gx) = acc(nodes, grads, *x) {
                    for k in 0..g.len() {
                        if !mask[k] {
                            gx[k] += g[k];
                        }
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                let width = node.value.numel() / rows.len();
                if let Some(gx) = acc(nodes, grads, *x) {
                    for (k, &r) in rows.iter().enumerate() {
                        for j in 0..width {
                            gx[r * width + j] += g[k * width + j];
                        }
                    }
                }
            }
            Op::LstmCell(s) => self.lstm_backward(s, g, grads),
            Op::SigmoidFocal {
                x,
                targets,
                alpha,
                gamma,
            } => {
                let xs = self.data(*x);
                if let Some(gx) = acc(nodes, grads, *x) {
                    for k in 0..g.len() {
                        gx[k] += g[k] * focal_grad(xs[k], targets[k], *alpha, *gamma);
                    }
                }
            }
        }
    }

    fn lstm_backward(&self, s: &LstmSaved, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let (batch, input) = self.value(s.x).dims2().expect("lstm x");
        let hidden = self.shape(s.h)[1];
        let h4 = 4 * hidden;
        let cd = self.data(s.c);
        let mut dz = vec![0.0; batch * h4];
        let mut dc_prev = vec![0.0; batch * hidden];
        for r in 0..batch {
            for j in 0..hidden {
                let gr = &s.gates[r * h4..(r + 1) * h4];
                let (i, f, gg, o) = (gr[j], gr[hidden + j], gr[2 * hidden + j], gr[3 * hidden + j]);
                let tc = s.tanh_c[r * hidden + j];
                let gh = g[r * 2 * hidden + j];
                let gc = g[r * 2 * hidden + hidden + j] + gh * o * (1.0 - tc * tc);
                let dzr = &mut dz[r * h4..(r + 1) * h4];
                dzr[j] = gc * gg * i * (1.0 - i);
                dzr[hidden + j] = gc * cd[r * hidden + j] * f * (1.0 - f);
                dzr[2 * hidden + j] = gc * i * (1.0 - gg * gg);
                dzr[3 * hidden + j] = gh * tc * o * (1.0 - o);
                dc_prev[r * hidden + j] = gc * f;
            }
        }
        if let Some(gx) = acc(nodes, grads, s.x) {
            kernels::matmul_nt_acc(&dz, self.data(s.w_ih), gx, batch, input, h4);
        }
        if let Some(gh) = acc(nodes, grads, s.h) {
            kernels::matmul_nt_acc(&dz, self.data(s.w_hh), gh, batch, hidden, h4);
        }
        if let Some(gc) = acc(nodes, grads, s.c) {
            for (d, v) in gc.iter_mut().zip(&dc_prev) {
                *d += v;
            }
        }
        if let Some(gw) = acc(nodes, grads, s.w_ih) {
            kernels::matmul_tn_acc(self.data(s.x), &dz, gw, batch, input, h4);
        }
        if let Some(gw) = acc(nodes, grads, s.w_hh) {
            kernels::matmul_tn_acc(self.data(s.h), &dz, gw, batch, hidden, h4);
        }
        if let Some(gb) = acc(nodes, grads, s.b) {
            for row in dz.chunks(h4) {
                for (d, v) in gb.iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
    }
}

/// Gradient buffer of a parent, or `None` when it needs no gradient.
fn acc<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

/// Focal loss of one logit `z` against target `y`.
pub(crate) fn focal_value(z: f64, y: f64, alpha: f64, gamma: f64) -> f64 {
    let p = kernels::sigmoid(z);
    let q = kernels::sigmoid(-z);
    let log_p = -kernels::softplus(-z);
    let log_q = -kernels::softplus(z);
    let pos = -alpha * q.powf(gamma) * log_p;
    let neg = -(1.0 - alpha) * p.powf(gamma) * log_q;
    y * pos + (1.0 - y) * neg
}

fn focal_grad(z: f64, y: f64, alpha: f64, gamma: f64) -> f64 {
    let p = kernels::sigmoid(z);
    let q = kernels::sigmoid(-z);
    let log_p = -kernels::softplus(-z);
    let log_q = -kernels::softplus(z);
    let pos = alpha * q.powf(gamma) * (gamma * p * log_p - q);
    let neg = (1.0 - alpha) * p.powf(gamma) * (p - gamma * q * log_q);
    y * pos + (1.0 - y) * neg
}
