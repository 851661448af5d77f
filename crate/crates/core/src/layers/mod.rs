//! Layer primitives with forward and backward rules.

pub mod conv;
pub mod dense;
pub mod init;
pub mod pool;
pub mod softmax;

pub use conv::{
    conv2d, depthwise_conv2d, pointwise_conv2d, separable_conv2d, separable_param_count, ConvParams, Padding,
    SeparableVars,
};
pub use dense::{dense, Activation, DenseParams};
pub use pool::{global_avg_pool2d, max_pool2d, weighted_global_avg_pool};
pub use softmax::{cross_entropy_loss, one_hot, softmax, LOG_EPS};
