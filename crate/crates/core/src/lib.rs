//! Change-aware Siamese defect segmentation.
//!
//! A defective (NG) image and its defect-free (OK) reference go through one
//! weight-shared transformer encoder. The per-stage feature differences are
//! fused, the per-pixel feature distance (the "distance map") is computed,
//! and a change-aware decoder turns both into per-class logits.
//!
//! The crate also ships the synthetic LCD defect generator used to train the
//! model, the dataset loader, metrics, and a training loop.

// Range checks are written `!(x > 0.0)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod complexity;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod synlcd;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{
    Config, ContrastiveMode, CrossClassSplit, DecoderMode, LossConfig, ModelConfig, Protocol,
    TrainConfig,
};
pub use data::ImagePair;
pub use error::{Error, Result};
pub use image::{Image, LabelMask};
pub use model::{Forward, Model, Prediction};
pub use trainer::{evaluate, EvalReport, LossRecord, ProtocolSpec, Trainer};
