use crate::autodiff::ops::clamp_open_unit;
use crate::autodiff::{Backward, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Clamp added inside the logarithm of the cross-entropy.
pub const LOG_EPS: f64 = 1e-12;

struct SoftmaxBackward;

impl<T: Scalar> Backward<T> for SoftmaxBackward {
    fn backward(
        &self,
        _parents: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let k = output.shape()[1];
        let mut gx = Tensor::zeros(output.shape());
        for ((gxr, yr), gr) in gx.data_mut().chunks_mut(k).zip(output.data().chunks(k)).zip(grad.data().chunks(k)) {
            let dot: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
            for ((d, &y), &g) in gxr.iter_mut().zip(yr).zip(gr) {
                *d = y * (g - dot);
            }
        }
        vec![Some(gx)]
    }
}

/// Row-wise softmax of an `n×k` matrix, max-subtracted and clamped into the
/// open unit interval like [`ops::sigmoid`](crate::autodiff::ops::sigmoid).
pub fn softmax<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let xv = g.try_value(x)?;
    if xv.rank() != 2 {
        return Err(Error::shape("softmax", format!("expected n×k, got {:?}", xv.shape())));
    }
    let k = xv.shape()[1];
    let mut out = Tensor::zeros(xv.shape());
    for (o, row) in out.data_mut().chunks_mut(k).zip(xv.data().chunks(k)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (d, &v) in o.iter_mut().zip(row) {
            *d = (v - max).exp();
            total = total + *d;
        }
        o.iter_mut().for_each(|d| *d = clamp_open_unit(*d / total));
    }
    Ok(g.record(out, &[x], SoftmaxBackward))
}

struct CrossEntropyBackward;

impl<T: Scalar> Backward<T> for CrossEntropyBackward {
    fn backward(
        &self,
        parents: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (p, y) = (parents[0], parents[1]);
        let n = T::from_usize(p.shape()[0]).expect("fits");
        let eps = T::from_f64_lossy(LOG_EPS);
        let scale = grad.data()[0] / n;
        let gp = needs[0].then(|| Tensor::from_fn(p.shape(), |i| -scale * y.data()[i] / (p.data()[i] + eps)));
        vec![gp, None]
    }
}

/// Mean categorical cross-entropy `-(1/n) Σ y·ln(p + ε)` of probabilities
/// against one-hot targets.
pub fn cross_entropy_loss<T: Scalar>(g: &mut Graph<T>, probs: Var, one_hot: Var) -> Result<Var> {
    let (pv, yv) = (g.try_value(probs)?, g.try_value(one_hot)?);
    if pv.rank() != 2 || pv.shape() != yv.shape() {
        return Err(Error::shape(
            "cross_entropy_loss",
            format!("probabilities {:?} vs targets {:?}", pv.shape(), yv.shape()),
        ));
    }
    let k = pv.shape()[1];
    for (r, row) in yv.data().chunks(k).enumerate() {
        let ones = row.iter().filter(|&&v| v == T::one()).count();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || ones + zeros != k {
            return Err(Error::invalid(format!("target row {r} is not one-hot")));
        }
    }
    let eps = T::from_f64_lossy(LOG_EPS);
    let total: T =
        pv.data().iter().zip(yv.data()).filter(|(_, &y)| y != T::zero()).map(|(&p, &y)| y * (p + eps).ln()).sum();
    let n = T::from_usize(pv.shape()[0]).expect("fits");
    let loss = Tensor::scalar(-total / n);
    Ok(g.record(loss, &[probs, one_hot], CrossEntropyBackward))
}

/// `n×k` one-hot matrix for integer labels.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!("label {bad} outside 0..{classes}")));
    }
    Ok(Tensor::from_fn(
        &[labels.len(), classes],
        |i| {
            if labels[i / classes] == i % classes {
                T::one()
            } else {
                T::zero()
            }
        },
    ))
}
