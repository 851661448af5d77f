use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: &[usize]) -> Self {
        Self { m: Tensor::zeros(shape), v: Tensor::zeros(shape), t: 0 }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.m.shape() || param.shape() != state.v.shape() {
        return Err(Error::shape(
            "adam_step",
            format!("param {:?}, grad {:?}, state {:?}", param.shape(), grad.shape(), state.m.shape()),
        ));
    }
    state.t += 1;
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let c = |x: f64| T::from_f64_lossy(x);
    let (b1, b2) = (c(cfg.beta1), c(cfg.beta2));
    let (one_m_b1, one_m_b2) = (c(1.0 - cfg.beta1), c(1.0 - cfg.beta2));
    let bc1 = c(1.0 - cfg.beta1.powi(t));
    let bc2 = c(1.0 - cfg.beta2.powi(t));
    let (lr, eps) = (c(cfg.learning_rate), c(cfg.eps));
    for (((p, &g), m), v) in
        param.data_mut().iter_mut().zip(grad.data()).zip(state.m.data_mut()).zip(state.v.data_mut())
    {
        *m = b1 * *m + one_m_b1 * g;
        *v = b2 * *v + one_m_b2 * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
