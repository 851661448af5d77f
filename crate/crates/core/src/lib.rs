//! Multi-head channel attention on a depthwise-separable CNN backbone.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] / [`autodiff`]: row-major tensors and a reverse-mode tape.
//! - [`layers`]: convolutions, pooling, dense, softmax and cross-entropy.
//! - [`attention`]: the multi-head channel attention block.
//! - [`model`]: the XceptionLite classifier, layer freezing and checkpoints.
//! - [`data`]: image ingest, preprocessing, stratified splits, synthetic data.
//! - [`train`]: Adam, the training loop, metrics and run aggregation.

pub mod attention;
pub mod autodiff;
mod binio;
pub mod data;
pub mod error;
pub mod gradcheck_suite;
pub mod layers;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

#[cfg(any(test, feature = "naive-oracles"))]
pub mod naive;

pub use attention::{AttentionConfig, AttentionParams, GateMode};
pub use autodiff::{Graph, Var};
pub use data::{Dataset, SplitIndices};
pub use error::{Error, Result};
pub use model::{Model, ModelConfig, ModelSpec};
pub use tensor::{DType, Scalar, Tensor};
pub use train::{MetricsReport, TrainConfig, TrainHistory};
