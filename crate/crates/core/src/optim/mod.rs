//! Training objectives, learning-rate schedules and the Adam optimizer.

mod adam;
mod loss;
mod schedule;

use std::path::PathBuf;

pub use adam::{make_optimizer, Adam};
pub use loss::{
    ce_loss, ce_loss_grad, combined_loss, combined_loss_grad, dice_loss, dice_loss_grad, loss_node, softmax,
    LossConfig, LossShape,
};
pub use schedule::{append_lr_rows, lr_at, lr_trace, read_lr_trace, write_lr_trace, SchedulePolicy, SchedulerConfig};

#[derive(Debug, thiserror::Error)]
pub enum OptimError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u8, classes: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
}
