use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded operation.
///
/// `parents` are the operation inputs in recording order. Implementations
/// return one entry per parent; entries may be `None` where `needs[i]` is
/// false.
pub trait Backward<T: Scalar>: Send {
    fn backward(
        &self,
        parents: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    parents: Vec<Var>,
    op: Option<Box<dyn Backward<T>>>,
    requires_grad: bool,
    is_param: bool,
}

/// Dynamically built computation tape.
///
/// Nodes are appended in execution order, so every node's inputs precede it
/// and a single reverse sweep visits each node once. Operations whose inputs
/// carry no gradient are stored as plain values without a backward rule.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Vec::new(), None, false, false)
    }

    /// Leaf that accumulates a gradient on [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Vec::new(), None, true, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor<T>> {
        self.nodes.get(v.0).map(|n| &n.value).ok_or(Error::NotOnTape(v.0))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Number of nodes that carry a backward rule.
    pub fn recorded_ops(&self) -> usize {
        self.nodes.iter().filter(|n| n.op.is_some()).count()
    }

    /// Appends the result of an operation. The backward rule is kept only
    /// when some parent requires a gradient.
    pub fn record(&mut self, value: Tensor<T>, parents: &[Var], op: impl Backward<T> + 'static) -> Var {
        if cfg!(debug_assertions) && !value.is_finite() {
            let inputs_finite = parents.iter().all(|p| self.nodes[p.0].value.is_finite());
            assert!(!inputs_finite, "operation produced non-finite values from finite inputs");
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op: Option<Box<dyn Backward<T>>> = if requires_grad { Some(Box::new(op)) } else { None };
        self.push(value, parents.to_vec(), op, requires_grad, false)
    }

    fn push(
        &mut self,
        value: Tensor<T>,
        parents: Vec<Var>,
        op: Option<Box<dyn Backward<T>>>,
        requires_grad: bool,
        is_param: bool,
    ) -> Var {
        self.nodes.push(Node { value, parents, op, requires_grad, is_param });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Gradients of parameter leaves accumulate across calls until
    /// [`Graph::zero_grad`]; intermediate gradients are not retained.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = self.nodes.get(loss.0).ok_or(Error::NotOnTape(loss.0))?;
        if node.value.len() != 1 {
            return Err(Error::NotScalar { shape: node.value.shape().to_vec() });
        }
        if !node.requires_grad {
            return Ok(());
        }
        let mut work: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        work[loss.0] = Some(Tensor::full(node.value.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(grad) = work[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Some(op) => {
                    let parents: Vec<&Tensor<T>> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
                    let needs: Vec<bool> = node.parents.iter().map(|p| self.nodes[p.0].requires_grad).collect();
                    let parent_grads = op.backward(&parents, &node.value, &grad, &needs);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for ((p, g), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                        let Some(g) = g else { continue };
                        if !need {
                            continue;
                        }
                        debug_assert_eq!(g.shape(), self.nodes[p.0].value.shape());
                        match &mut work[p.0] {
                            Some(acc) => acc.add_assign(&g),
                            slot @ None => *slot = Some(g),
                        }
                    }
                }
                None if node.is_param => match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                },
                None => {}
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a parameter leaf, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Accumulated gradient, or zeros when the leaf is unreachable from the loss.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<T> {
        self.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_fn(&[2, 3], |i| i as f64 - 1.5));
        let loss = ops::sum(&mut g, x);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn square_gradient_is_twice_x() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let sq = ops::mul(&mut g, x, x).unwrap();
        let loss = ops::sum(&mut g, sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn repeated_backward_accumulates_until_reset() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_slice(&[2], &[1.0, -2.0]).unwrap());
        let loss = ops::sum(&mut g, x);
        g.backward(loss).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn unreachable_parameter_gets_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(&[3]));
        let unused = g.param(Tensor::ones(&[2]));
        let loss = ops::sum(&mut g, x);
        g.backward(loss).unwrap();
        assert_eq!(g.grad_or_zeros(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(&[3]));
        assert!(matches!(g.backward(x), Err(Error::NotScalar { .. })));
    }

    #[test]
    fn foreign_variable_is_rejected() {
        let mut other = Graph::<f64>::new();
        for _ in 0..4 {
            other.constant(Tensor::scalar(0.0));
        }
        let foreign = other.constant(Tensor::scalar(1.0));
        let mut g = Graph::<f64>::new();
        g.param(Tensor::scalar(1.0));
        assert!(matches!(g.backward(foreign), Err(Error::NotOnTape(4))));
    }

    #[test]
    fn constants_do_not_record_backward_rules() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::ones(&[4]));
        let b = ops::relu(&mut g, a);
        let _ = ops::sum(&mut g, b);
        assert_eq!(g.recorded_ops(), 0);
    }
}
