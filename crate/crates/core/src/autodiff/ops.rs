//! Tape-recorded tensor primitives.

use super::graph::{Backward, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Multiply,
    Relu,
    Sigmoid,
}

/// Dispatches one of the elementwise primitives; binary ops require `b`.
pub fn elementwise<T: Scalar>(g: &mut Graph<T>, op: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
    match (op, b) {
        (Elementwise::Add, Some(b)) => add(g, a, b),
        (Elementwise::Multiply, Some(b)) => mul(g, a, b),
        (Elementwise::Relu, None) => Ok(relu(g, a)),
        (Elementwise::Sigmoid, None) => Ok(sigmoid(g, a)),
        (op, b) => Err(Error::invalid(format!(
            "{op:?} takes {} operand(s), got {}",
            if matches!(op, Elementwise::Add | Elementwise::Multiply) { 2 } else { 1 },
            1 + b.is_some() as usize
        ))),
    }
}

/// Output shape when broadcasting `a` against `b`: dimensions are aligned
/// from the right, missing leading dimensions and size-1 axes stretch.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape("broadcast", format!("{a:?} and {b:?} are not broadcast-compatible"))),
        };
    }
    Ok(out)
}

/// Maps output flat indices to operand flat indices.
#[derive(Clone, Debug)]
enum IndexMap {
    Identity,
    /// Operand shape is a suffix of the output shape.
    Cycle(usize),
    Table(Vec<usize>),
}

impl IndexMap {
    fn build(operand: &[usize], out: &[usize]) -> Self {
        if operand == out {
            return IndexMap::Identity;
        }
        let offset = out.len() - operand.len();
        if operand == &out[offset..] {
            return IndexMap::Cycle(operand.iter().product());
        }
        // Strides of the operand aligned to the output, zero on stretched axes.
        let mut strides = vec![0usize; out.len()];
        let mut acc = 1;
        for i in (0..operand.len()).rev() {
            if operand[i] != 1 {
                strides[i + offset] = acc;
            }
            acc *= operand[i];
        }
        let total: usize = out.iter().product();
        let mut table = Vec::with_capacity(total);
        let mut counter = vec![0usize; out.len()];
        let mut idx = 0usize;
        for _ in 0..total {
            table.push(idx);
            for d in (0..out.len()).rev() {
                counter[d] += 1;
                idx += strides[d];
                if counter[d] < out[d] {
                    break;
                }
                idx -= strides[d] * counter[d];
                counter[d] = 0;
            }
        }
        IndexMap::Table(table)
    }

    #[inline]
    fn get(&self, i: usize) -> usize {
        match self {
            IndexMap::Identity => i,
            IndexMap::Cycle(n) => i % n,
            IndexMap::Table(t) => t[i],
        }
    }

    /// Sums `grad` (output-shaped) back onto an operand of `shape`.
    fn reduce<T: Scalar>(&self, grad: &[T], shape: &[usize]) -> Tensor<T> {
        if let IndexMap::Identity = self {
            return Tensor::from_slice(shape, grad).expect("identity map keeps shape");
        }
        let mut out = Tensor::zeros(shape);
        let data = out.data_mut();
        for (i, &g) in grad.iter().enumerate() {
            let j = self.get(i);
            data[j] = data[j] + g;
        }
        out
    }
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Mul,
}

struct BinaryBackward {
    kind: BinaryKind,
    a_map: IndexMap,
    b_map: IndexMap,
}

impl<T: Scalar> Backward<T> for BinaryBackward {
    fn backward(
        &self,
        parents: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (parents[0], parents[1]);
        let g = grad.data();
        let ga = needs[0].then(|| match self.kind {
            BinaryKind::Add => self.a_map.reduce(g, a.shape()),
            BinaryKind::Mul => {
                let bd = b.data();
                let prod: Vec<T> = g.iter().enumerate().map(|(i, &gi)| gi * bd[self.b_map.get(i)]).collect();
                self.a_map.reduce(&prod, a.shape())
            }
        });
        let gb = needs[1].then(|| match self.kind {
            BinaryKind::Add => self.b_map.reduce(g, b.shape()),
            BinaryKind::Mul => {
                let ad = a.data();
                let prod: Vec<T> = g.iter().enumerate().map(|(i, &gi)| gi * ad[self.a_map.get(i)]).collect();
                self.b_map.reduce(&prod, b.shape())
            }
        });
        vec![ga, gb]
    }
}

fn binary<T: Scalar>(g: &mut Graph<T>, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
    let (av, bv) = (g.try_value(a)?, g.try_value(b)?);
    let out_shape = broadcast_shape(av.shape(), bv.shape())?;
    let a_map = IndexMap::build(av.shape(), &out_shape);
    let b_map = IndexMap::build(bv.shape(), &out_shape);
    let (ad, bd) = (av.data(), bv.data());
    let f = |x: T, y: T| match kind {
        BinaryKind::Add => x + y,
        BinaryKind::Mul => x * y,
    };
    let out = Tensor::from_fn(&out_shape, |i| f(ad[a_map.get(i)], bd[b_map.get(i)]));
    Ok(g.record(out, &[a, b], BinaryBackward { kind, a_map, b_map }))
}

pub fn add<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    binary(g, BinaryKind::Add, a, b)
}

pub fn mul<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    binary(g, BinaryKind::Mul, a, b)
}

struct ReluBackward;

impl<T: Scalar> Backward<T> for ReluBackward {
    fn backward(
        &self,
        parents: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let x = parents[0].data();
        let gd = grad.data();
        let out = Tensor::from_fn(parents[0].shape(), |i| if x[i] > T::zero() { gd[i] } else { T::zero() });
        vec![Some(out)]
    }
}

pub fn relu<T: Scalar>(g: &mut Graph<T>, a: Var) -> Var {
    let out = g.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
    g.record(out, &[a], ReluBackward)
}

struct SigmoidBackward;

impl<T: Scalar> Backward<T> for SigmoidBackward {
    fn backward(
        &self,
        _parents: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let y = output.data();
        let gd = grad.data();
        vec![Some(Tensor::from_fn(output.shape(), |i| gd[i] * y[i] * (T::one() - y[i])))]
    }
}

/// Logistic function, clamped so every output lies strictly inside (0, 1).
pub(crate) fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    let y = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    clamp_open_unit(y)
}

pub(crate) fn clamp_open_unit<T: Scalar>(y: T) -> T {
    let below_one = T::one() - T::epsilon() / T::from_f64_lossy(2.0);
    y.max(T::min_positive_value()).min(below_one)
}

pub fn sigmoid<T: Scalar>(g: &mut Graph<T>, a: Var) -> Var {
    let out = g.value(a).map(sigmoid_scalar);
    g.record(out, &[a], SigmoidBackward)
}

struct MatmulBackward;

impl<T: Scalar> Backward<T> for MatmulBackward {
    fn backward(
        &self,
        parents: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (parents[0], parents[1]);
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let (ki, ni) = (k as isize, n as isize);
        let ga = needs[0].then(|| {
            // dA = dY · Bᵀ
            let mut out = Tensor::zeros(&[m, k]);
            T::gemm(m, n, k, grad.data(), (ni, 1), b.data(), (1, ni), T::zero(), out.data_mut(), (ki, 1));
            out
        });
        let gb = needs[1].then(|| {
            // dB = Aᵀ · dY
            let mut out = Tensor::zeros(&[k, n]);
            T::gemm(k, m, n, a.data(), (1, ki), grad.data(), (ni, 1), T::zero(), out.data_mut(), (ni, 1));
            out
        });
        vec![ga, gb]
    }
}

/// Product of an `m×k` and a `k×n` matrix.
pub fn matmul<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let (av, bv) = (g.try_value(a)?, g.try_value(b)?);
    if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
        return Err(Error::shape("matmul", format!("cannot multiply {:?} by {:?}", av.shape(), bv.shape())));
    }
    let out = matmul_values(av, bv);
    Ok(g.record(out, &[a, b], MatmulBackward))
}

pub(crate) fn matmul_values<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = Tensor::zeros(&[m, n]);
    T::gemm(m, k, n, a.data(), (k as isize, 1), b.data(), (n as isize, 1), T::zero(), out.data_mut(), (n as isize, 1));
    out
}

struct SumBackward;

impl<T: Scalar> Backward<T> for SumBackward {
    fn backward(
        &self,
        parents: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        vec![Some(Tensor::full(parents[0].shape(), grad.data()[0]))]
    }
}

/// Sum of all elements, as a shape-`[1]` tensor.
pub fn sum<T: Scalar>(g: &mut Graph<T>, a: Var) -> Var {
    let s = g.value(a).sum();
    g.record(Tensor::scalar(s), &[a], SumBackward)
}

struct ScaleBackward<T>(T);

impl<T: Scalar> Backward<T> for ScaleBackward<T> {
    fn backward(
        &self,
        _parents: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let c = self.0;
        vec![Some(grad.map(|v| v * c))]
    }
}

pub fn scale<T: Scalar>(g: &mut Graph<T>, a: Var, c: T) -> Var {
    let out = g.value(a).map(|v| v * c);
    g.record(out, &[a], ScaleBackward(c))
}

struct ReshapeBackward;

impl<T: Scalar> Backward<T> for ReshapeBackward {
    fn backward(
        &self,
        parents: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        vec![Some(grad.clone().reshape(parents[0].shape()).expect("same element count"))]
    }
}

pub fn reshape<T: Scalar>(g: &mut Graph<T>, a: Var, shape: &[usize]) -> Result<Var> {
    let out = g.try_value(a)?.clone().reshape(shape)?;
    Ok(g.record(out, &[a], ReshapeBackward))
}

struct SortedMeanBackward(usize);

impl<T: Scalar> Backward<T> for SortedMeanBackward {
    fn backward(
        &self,
        parents: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let inv = T::one() / T::from_usize(self.0).expect("count fits");
        let shared = grad.map(|v| v * inv);
        parents.iter().zip(needs).map(|(_, &n)| n.then(|| shared.clone())).collect()
    }
}

/// Elementwise arithmetic mean of same-shaped tensors.
///
/// Each output component sums its inputs in ascending order, so the result
/// is bit-identical under any permutation of `inputs`.
pub fn permutation_invariant_mean<T: Scalar>(g: &mut Graph<T>, inputs: &[Var]) -> Result<Var> {
    let first = *inputs.first().ok_or_else(|| Error::invalid("mean of zero tensors"))?;
    let shape = g.try_value(first)?.shape().to_vec();
    for &v in inputs {
        if g.try_value(v)?.shape() != shape.as_slice() {
            return Err(Error::shape("mean", format!("{:?} vs {shape:?}", g.value(v).shape())));
        }
    }
    let count = T::from_usize(inputs.len()).expect("count fits");
    let mut column = Vec::with_capacity(inputs.len());
    let out = Tensor::from_fn(&shape, |i| {
        column.clear();
        column.extend(inputs.iter().map(|&v| g.value(v).data()[i]));
        column.sort_by(|a, b| a.total_cmp(b));
        column.iter().fold(T::zero(), |acc, &x| acc + x) / count
    });
    Ok(g.record(out, inputs, SortedMeanBackward(inputs.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_slice(shape, data).unwrap()
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1], &[0.0]));
        let y = elementwise(&mut g, Elementwise::Sigmoid, x, None).unwrap();
        assert_eq!(g.value(y).data(), &[0.5]);
    }

    #[test]
    fn sigmoid_stays_inside_open_interval() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_slice(&[4], &[-200.0, -40.0, 40.0, 200.0]).unwrap());
        let y = sigmoid(&mut g, x);
        assert!(g.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn relu_clips_negatives() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[-1.0, 2.0]));
        let y = elementwise(&mut g, Elementwise::Relu, x, None).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn add_broadcasts_scalar() {
        let mut g = Graph::new();
        let a = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let b = g.constant(t(&[1], &[10.0]));
        let y = elementwise(&mut g, Elementwise::Add, a, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[11.0, 12.0, 13.0]);
    }

    #[test]
    fn incompatible_shapes_rejected() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::<f64>::zeros(&[2, 3]));
        let b = g.constant(Tensor::<f64>::zeros(&[2]));
        assert!(matches!(add(&mut g, a, b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn wrong_arity_rejected() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::<f64>::zeros(&[2]));
        assert!(elementwise(&mut g, Elementwise::Add, a, None).is_err());
        assert!(elementwise(&mut g, Elementwise::Relu, a, Some(a)).is_err());
    }

    #[test]
    fn size_one_axes_stretch_in_the_middle() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_fn(&[2, 2, 3], |i| i as f64));
        let s = g.param(t(&[2, 1, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = mul(&mut g, x, s).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 2.0, 6.0, 3.0, 8.0, 15.0, 24.0, 35.0, 48.0, 36.0, 50.0, 66.0]);
        let l = sum(&mut g, y);
        g.backward(l).unwrap();
        // d/ds = sum over the stretched axis of x
        assert_eq!(g.grad(s).unwrap().data(), &[3.0, 5.0, 7.0, 15.0, 17.0, 19.0]);
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut g = Graph::new();
        let i2 = g.constant(Tensor::eye(2));
        let m = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = matmul(&mut g, i2, m).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

        let r = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let c = g.constant(t(&[2, 1], &[3.0, 4.0]));
        let y = matmul(&mut g, r, c).unwrap();
        assert_eq!(g.value(y).data(), &[11.0]);
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::<f64>::zeros(&[2, 3]));
        let b = g.constant(Tensor::<f64>::zeros(&[2, 3]));
        assert!(matmul(&mut g, a, b).is_err());
    }

    #[test]
    fn sorted_mean_ignores_input_order() {
        let vals = [[0.1f32, 0.7], [1e-8, 0.3], [0.9, 1e7], [0.33, -2.5]];
        let mean_of = |order: &[usize]| {
            let mut g = Graph::new();
            let vars: Vec<Var> =
                order.iter().map(|&i| g.constant(Tensor::from_slice(&[2], &vals[i]).unwrap())).collect();
            let m = permutation_invariant_mean(&mut g, &vars).unwrap();
            g.value(m).clone()
        };
        let a = mean_of(&[0, 1, 2, 3]);
        for order in [[3, 2, 1, 0], [1, 3, 0, 2], [2, 0, 3, 1]] {
            let b = mean_of(&order);
            assert_eq!(
                a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
