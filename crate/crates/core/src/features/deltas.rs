use super::FeatureSequence;
use crate::error::{Error, Result};

const RADIUS: usize = 2;

/// Regression deltas over time with edge replication:
/// `d_t = sum_{n=1..2} n (c_{t+n} - c_{t-n}) / (2 sum n^2)`.
fn deltas(values: &[f64], frames: usize, dim: usize) -> Vec<f64> {
    let denom = 2.0 * (1..=RADIUS).map(|n| (n * n) as f64).sum::<f64>();
    let at = |t: isize, j: usize| values[t.clamp(0, frames as isize - 1) as usize * dim + j];
    let mut out = vec![0.0; frames * dim];
    for t in 0..frames {
        for j in 0..dim {
            let mut acc = 0.0;
            for n in 1..=RADIUS {
                let n_i = n as isize;
                acc += n as f64 * (at(t as isize + n_i, j) - at(t as isize - n_i, j));
            }
            out[t * dim + j] = acc / denom;
        }
    }
    out
}

/// Concatenate first- and second-order deltas: `T x E` becomes `T x 3E`.
pub fn append_deltas(features: &FeatureSequence) -> Result<FeatureSequence> {
    let (frames, dim) = (features.frames, features.dim);
    if frames < 3 {
        return Err(Error::invalid(format!(
            "delta features need at least 3 frames, got {frames}"
        )));
    }
    let base: Vec<f64> = features.values.iter().map(|&v| f64::from(v)).collect();
    let d1 = deltas(&base, frames, dim);
    let d2 = deltas(&d1, frames, dim);
    let mut values = Vec::with_capacity(frames * dim * 3);
    for t in 0..frames {
        let row = t * dim..(t + 1) * dim;
        values.extend_from_slice(&features.values[row.clone()]);
        values.extend(d1[row.clone()].iter().map(|&v| v as f32));
        values.extend(d2[row].iter().map(|&v| v as f32));
    }
    FeatureSequence::new(values, frames, dim * 3, features.frame_spec, features.duration_s)
}
