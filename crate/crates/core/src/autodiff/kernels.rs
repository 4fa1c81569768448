//! Dense loops shared by forward and backward passes.

/// `out[m,n] += a[m,k] * b[k,n]`
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] * b[k,n]^T`
pub fn matmul_nt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for kk in 0..k {
            let b_row = &b[kk * n..(kk + 1) * n];
            let dot: f64 = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            out[i * k + kk] += dot;
        }
    }
}

/// `out[k,n] += a[m,k]^T * g[m,n]`
pub fn matmul_tn_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[kk * n..(kk + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}

/// Split a shape around `axis` into `(outer, extent, inner)`.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Geometry of a 1-D convolution over a time-major `[T, C_in]` input.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub t_in: usize,
    pub t_out: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }

    pub fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }

    /// Input row read by output row `to` at kernel tap `k`, if inside the signal.
    #[inline]
    pub fn source(&self, to: usize, k: usize) -> Option<usize> {
        let pos = (to * self.stride + k * self.dilation) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < self.t_in).then_some(pos as usize)
    }

    /// im2col for one group: `[t_out, kernel * cin_g]`, tap-major columns.
    pub fn im2col(&self, x: &[f64], group: usize) -> Vec<f64> {
        let cin_g = self.cin_g();
        let width = self.kernel * cin_g;
        let mut cols = vec![0.0; self.t_out * width];
        for to in 0..self.t_out {
            for k in 0..self.kernel {
                if let Some(ti) = self.source(to, k) {
                    let src = &x[ti * self.c_in + group * cin_g..ti * self.c_in + (group + 1) * cin_g];
                    cols[to * width + k * cin_g..to * width + (k + 1) * cin_g].copy_from_slice(src);
                }
            }
        }
        cols
    }

    /// Scatter-add the im2col gradient of one group back into `gx`.
    pub fn col2im_acc(&self, gcols: &[f64], group: usize, gx: &mut [f64]) {
        let cin_g = self.cin_g();
        let width = self.kernel * cin_g;
        for to in 0..self.t_out {
            for k in 0..self.kernel {
                if let Some(ti) = self.source(to, k) {
                    let dst = &mut gx[ti * self.c_in + group * cin_g..ti * self.c_in + (group + 1) * cin_g];
                    let src = &gcols[to * width + k * cin_g..to * width + (k + 1) * cin_g];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }

    /// Weight `[c_out, cin_g, kernel]` of one group rearranged to `[kernel * cin_g, cout_g]`.
    pub fn weight_matrix(&self, w: &[f64], group: usize) -> Vec<f64> {
        let (cin_g, cout_g) = (self.cin_g(), self.cout_g());
        let mut out = vec![0.0; self.kernel * cin_g * cout_g];
        for oc in 0..cout_g {
            let co = group * cout_g + oc;
            for ci in 0..cin_g {
                for k in 0..self.kernel {
                    out[(k * cin_g + ci) * cout_g + oc] = w[(co * cin_g + ci) * self.kernel + k];
                }
            }
        }
        out
    }

    /// Inverse of [`ConvGeom::weight_matrix`], accumulating into `gw`.
    pub fn weight_matrix_acc(&self, gm: &[f64], group: usize, gw: &mut [f64]) {
        let (cin_g, cout_g) = (self.cin_g(), self.cout_g());
        for oc in 0..cout_g {
            let co = group * cout_g + oc;
            for ci in 0..cin_g {
                for k in 0..self.kernel {
                    gw[(co * cin_g + ci) * self.kernel + k] += gm[(k * cin_g + ci) * cout_g + oc];
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree_with_naive() {
        let (m, k, n) = (3, 4, 2);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let mut c = vec![0.0; m * n];
        matmul_acc(&a, &b, &mut c, m, k, n);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|t| a[i * k + t] * b[t * n + j]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
        // a = c * b^T shape check: [m,n] x [k,n]^T -> [m,k]
        let mut out = vec![0.0; m * k];
        matmul_nt_acc(&c, &b, &mut out, m, k, n);
        let want: f64 = (0..n).map(|j| c[j] * b[j]).sum();
        assert!((out[0] - want).abs() < 1e-12);
        let mut out = vec![0.0; k * n];
        matmul_tn_acc(&a, &c, &mut out, m, k, n);
        let want: f64 = (0..m).map(|i| a[i * k] * c[i * n]).sum();
        assert!((out[0] - want).abs() < 1e-12);
    }

    #[test]
    fn stable_scalar_functions() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
    }
}
