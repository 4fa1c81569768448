//! Minimal reverse-mode differentiation over dense `f64` tensors, plus the
//! optimizer, learning-rate schedule and checkpoint format used for training.

mod checkpoint;
mod gradcheck;
mod graph;
mod kernels;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, store_checkpoint, write_checkpoint};
pub use gradcheck::grad_check;
pub use graph::{Gradients, Graph, Var};
pub use optim::{adamw_step, lr_at, AdamWConfig, OptimizerState};
pub use params::{BoundParams, ParamStore};
pub use tensor::Tensor;

pub(crate) use graph::focal_value;
pub(crate) use kernels::sigmoid;
