//! PC-Net vessel segmentation toolkit.
//!
//! A U-shaped segmentation network with pyramid squeeze-and-excitation
//! attention in every convolutional block and a coarse-to-fine residual
//! decoder, trained with a deep-supervised multi-scale loss. Everything runs
//! on the small reverse-mode tensor engine in [`autodiff`], in 2D or 3D.
//!
//! Module map:
//! - [`tensor`], [`autodiff`], [`optim`]: dense tensors, differentiable ops, Adam
//! - [`model`]: blocks, model variants, loss, complexity counting, inference
//! - [`data`]: preprocessing, augmentation, patch sampling, synthetic vessels
//! - [`eval`]: ROC/AUC, threshold metrics, component filtering
//! - [`config`], [`train`], [`cli`]: run configuration and command front end

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{DType, DynTensor, Tensor};
