//! Central-difference gradient checking in double precision.

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Max over components of `|analytic - numeric| / max(1, |numeric|)`, where
/// `numeric` is the central difference of `f` around `x` with step `eps`.
///
/// `f` must build a scalar on the graph it is given. `x` is not modified.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let errs = grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), eps)?;
    Ok(errs[0])
}

/// Like [`grad_check`] for several inputs at once; returns the max relative
/// error per input.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {eps}")));
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let shape = g.value(out).shape().to_vec();
    if g.value(out).len() != 1 {
        return Err(Error::NotScalar { shape });
    }
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let eval = |probe: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = probe.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut probe = inputs.to_vec();
    let mut errors = Vec::with_capacity(inputs.len());
    for (j, grad) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for i in 0..inputs[j].len() {
            let orig = inputs[j].data()[i];
            probe[j].data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe[j].data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe[j].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (grad.data()[i] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
        errors.push(worst);
    }
    Ok(errors)
}
