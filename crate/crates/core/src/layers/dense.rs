use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init;
use super::softmax::softmax;
use crate::autodiff::{ops, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
    Softmax,
}

/// `in_features × out_features` weight and `out_features` bias.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseParams<T> {
    /// He-uniform weights when feeding a ReLU, Glorot-uniform otherwise;
    /// zero bias.
    pub fn init(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let weight = match activation {
            Activation::Relu => init::he_uniform(&[inputs, outputs], inputs, rng),
            _ => init::glorot_uniform(&[inputs, outputs], inputs, outputs, rng),
        };
        Self { weight, bias: Tensor::zeros(&[outputs]) }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

pub(crate) fn activate<T: Scalar>(g: &mut Graph<T>, z: Var, activation: Activation) -> Result<Var> {
    Ok(match activation {
        Activation::None => z,
        Activation::Relu => ops::relu(g, z),
        Activation::Sigmoid => ops::sigmoid(g, z),
        Activation::Softmax => softmax(g, z)?,
    })
}

/// `activation(x·W + b)` for an `n×in` input.
pub fn dense<T: Scalar>(g: &mut Graph<T>, x: Var, weight: Var, bias: Var, activation: Activation) -> Result<Var> {
    let (xv, wv, bv) = (g.try_value(x)?, g.try_value(weight)?, g.try_value(bias)?);
    if xv.rank() != 2 || wv.rank() != 2 || xv.shape()[1] != wv.shape()[0] {
        return Err(Error::shape("dense", format!("input {:?} does not match weight {:?}", xv.shape(), wv.shape())));
    }
    if bv.shape() != [wv.shape()[1]] {
        return Err(Error::shape("dense", format!("bias {:?} does not match weight {:?}", bv.shape(), wv.shape())));
    }
    let z = ops::matmul(g, x, weight)?;
    let z = ops::add(g, z, bias)?;
    activate(g, z, activation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::naive;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weight_passes_input() {
        let mut g = Graph::<f64>::new();
        let xv = Tensor::from_slice(&[2, 2], &[1.0, -2.0, 3.5, 0.0]).unwrap();
        let x = g.constant(xv.clone());
        let w = g.constant(Tensor::eye(2));
        let b = g.constant(Tensor::zeros(&[2]));
        let y = dense(&mut g, x, w, b, Activation::None).unwrap();
        assert_eq!(g.value(y), &xv);
    }

    #[test]
    fn hand_computed_relu_unit() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_slice(&[1, 2], &[1.0, 1.0]).unwrap());
        let w = g.constant(Tensor::from_slice(&[2, 1], &[1.0, 1.0]).unwrap());
        let b = g.constant(Tensor::from_slice(&[1], &[0.5]).unwrap());
        let y = dense(&mut g, x, w, b, Activation::Relu).unwrap();
        assert_eq!(g.value(y).data(), &[2.5]);
    }

    #[test]
    fn random_case_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = DenseParams::<f64>::init(5, 3, Activation::Sigmoid, &mut rng);
        let xv = init::he_uniform(&[4, 5], 1, &mut rng);
        let mut bias = p.bias.clone();
        bias.data_mut().copy_from_slice(&[0.1, -0.2, 0.3]);
        let expect = naive::dense(&xv, &p.weight, &bias).map(|z| 1.0 / (1.0 + (-z).exp()));
        let mut g = Graph::new();
        let (x, w, b) = (g.constant(xv), g.constant(p.weight), g.constant(bias));
        let y = dense(&mut g, x, w, b, Activation::Sigmoid).unwrap();
        assert!(g.value(y).max_abs_diff(&expect).unwrap() < 1e-6);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 3]));
        let w = g.constant(Tensor::zeros(&[2, 2]));
        let b = g.constant(Tensor::zeros(&[2]));
        assert!(dense(&mut g, x, w, b, Activation::None).is_err());
    }
}
