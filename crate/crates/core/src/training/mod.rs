//! Target assignment over pyramid timestamps, the focal + DIoU objective, and
//! the training loop.

mod loss;
mod targets;
mod train;

pub use loss::{anchored_diou, diou_loss, focal_loss, total_loss, LossConfig};
pub use targets::{assign_targets, LevelTargets, PyramidGeometry, TargetAssignment};
pub use train::{evaluate_loss, train, train_with, EpochRecord, TrainConfig, TrainLog, TrainingClip};
