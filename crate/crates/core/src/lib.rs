//! Multi-class organ-at-risk segmentation of 3D volumes.
//!
//! - [`data`]: ingestion, mask merging, splits, preprocessing, augmentation
//! - [`model`]: U-Net, U-Net++, residual U-Nets (2D, dilated 2D, 3D) and
//!   their encoder families
//! - [`optim`]: DICE, cross-entropy and compound losses, cyclic learning
//!   rates, Adam
//! - [`metrics`]: per-class DICE and HD95 in millimetres, report aggregation
//! - [`engine`]: experiment configs, training, inference, checkpoints and
//!   baseline/enhanced comparison

pub mod data;
pub mod engine;
pub mod metrics;
pub mod model;
pub mod optim;
