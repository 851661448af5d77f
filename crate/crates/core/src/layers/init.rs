//! Uniform fan-based initializers.

use rand::Rng;

use crate::tensor::{Scalar, Tensor};

fn uniform<T: Scalar>(shape: &[usize], limit: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-limit..=limit)))
}

/// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, for layers feeding a ReLU.
pub fn he_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    uniform(shape, (6.0 / fan_in.max(1) as f64).sqrt(), rng)
}

/// `U(-sqrt(6/(fan_in+fan_out)), ..)`, for layers feeding sigmoid/softmax.
pub fn glorot_uniform<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor<T> {
    uniform(shape, (6.0 / (fan_in + fan_out).max(1) as f64).sqrt(), rng)
}
