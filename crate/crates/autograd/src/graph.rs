use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use ndarray::{ArrayD, IxDyn};

use crate::Real;

pub type Tensor<T> = ArrayD<T>;

/// Backward rule of a recorded op.
///
/// Receives the gradient w.r.t. the op's output and a mask saying which
/// parents need a gradient; returns one entry per parent (in order). Entries
/// for masked-out parents may be `None`.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Real> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// An append-only tape of tensor operations.
///
/// Build one graph per forward pass, call [`Graph::backward`] on a scalar
/// result, then drop it. Nodes whose parents are all constants are stored
/// without a backward rule, so inference through a graph costs no extra memory.
pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Rc::new(value), Vec::new(), None, false)
    }

    /// A leaf whose gradient is collected by [`Graph::backward`].
    pub fn variable(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Rc::new(value), Vec::new(), None, true)
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.constant(ArrayD::from_elem(IxDyn(&[]), value))
    }

    /// Records a custom op. `backward` is dropped when no parent needs a
    /// gradient.
    pub fn custom_op<F>(&self, parents: &[Var<'_, T>], value: Tensor<T>, backward: F) -> Var<'_, T>
    where
        F: Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    {
        for p in parents {
            assert!(
                std::ptr::eq(p.graph, self),
                "custom_op parents must belong to this graph"
            );
        }
        let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let requires_grad = {
            let nodes = self.nodes.borrow();
            ids.iter().any(|&i| nodes[i].requires_grad)
        };
        let backward: Option<BackwardFn<T>> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.push(Rc::new(value), ids, backward, requires_grad)
    }

    fn push(
        &self,
        value: Rc<Tensor<T>>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
        requires_grad: bool,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            parents,
            backward,
            requires_grad,
        });
        Var { graph: self, id }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse-mode sweep from `output`, seeded with ones.
    ///
    /// Only leaf gradients are retained in the result.
    pub fn backward(&self, output: Var<'_, T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        if !nodes[output.id].requires_grad {
            return Gradients { grads };
        }
        grads[output.id] = Some(ArrayD::from_elem(nodes[output.id].value.raw_dim(), T::one()));

        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let mask: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = backward(&grad, &mask);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&pid, pg), need) in node.parents.iter().zip(parent_grads).zip(mask) {
                let (true, Some(pg)) = (need, pg) else {
                    continue;
                };
                debug_assert_eq!(pg.shape(), nodes[pid].value.shape(), "gradient shape mismatch");
                match &mut grads[pid] {
                    Some(acc) => *acc += &pg,
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Gradients { grads }
    }
}

/// Leaf gradients from one backward sweep.
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when the variable was unreachable from the output or is a constant.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

/// Handle to a node in a [`Graph`].
pub struct Var<'g, T: Real> {
    pub(crate) graph: &'g Graph<T>,
    pub(crate) id: usize,
}

impl<T: Real> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Real> Copy for Var<'_, T> {}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'g, T: Real> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad_of(self.id)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a tensor with {} elements", v.len());
        *v.iter().next().unwrap()
    }

    /// Same value, cut off from the gradient sweep.
    pub fn detach(&self) -> Var<'g, T> {
        self.graph.push(self.value(), Vec::new(), None, false)
    }

    pub(crate) fn op<F>(&self, parents: &[Var<'g, T>], value: Tensor<T>, backward: F) -> Var<'g, T>
    where
        F: Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    {
        self.graph.custom_op(parents, value, backward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn constants_do_not_record_backward() {
        let g = Graph::<f64>::new();
        let a = g.constant(arr1(&[1.0, 2.0]).into_dyn());
        let b = a.mul_scalar(3.0).sum_all();
        assert!(!b.requires_grad());
        let grads = g.backward(b);
        assert!(grads.get(a).is_none());
    }

    #[test]
    fn gradients_accumulate_over_shared_inputs() {
        let g = Graph::<f64>::new();
        let a = g.variable(arr1(&[1.0, -2.0]).into_dyn());
        let y = a.mul(a).add(a).sum_all();
        let grads = g.backward(y);
        let ga = grads.get(a).unwrap();
        assert_eq!(ga.as_slice().unwrap(), &[3.0, -3.0]);
    }
}
