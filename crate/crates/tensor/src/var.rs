use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use crate::{Param, Tensor};

type BackwardFn = Box<dyn Fn(&Tensor, &[Var]) -> Vec<Option<Tensor>>>;

/// A node in the autodiff graph.
#[derive(Clone)]
pub struct Var(Rc<Node>);

struct Node {
    value: Tensor,
    grad: RefCell<Option<Tensor>>,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    sink: Option<Param>,
    requires_grad: bool,
}

impl Var {
    /// A value that never receives a gradient.
    pub fn constant(value: Tensor) -> Var {
        Var(Rc::new(Node {
            value,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
            sink: None,
            requires_grad: false,
        }))
    }

    /// A leaf whose gradient is kept on the node and readable via [`Var::grad`].
    pub fn input(value: Tensor) -> Var {
        Var(Rc::new(Node {
            value,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
            sink: None,
            requires_grad: true,
        }))
    }

    /// Snapshot of a parameter. Gradients flowing into this leaf are added
    /// to the parameter's accumulator.
    pub fn param(param: &Param) -> Var {
        Var(Rc::new(Node {
            value: param.value().clone(),
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
            sink: Some(param.clone()),
            requires_grad: true,
        }))
    }

    /// Snapshot of a parameter that does not participate in differentiation.
    pub fn frozen(param: &Param) -> Var {
        Var::constant(param.value().clone())
    }

    /// Creates an interior node. `backward` receives the output gradient and
    /// the parents and returns one optional gradient per parent. When no
    /// parent requires a gradient the closure is dropped immediately.
    pub fn from_op<F>(value: Tensor, parents: Vec<Var>, backward: F) -> Var
    where
        F: Fn(&Tensor, &[Var]) -> Vec<Option<Tensor>> + 'static,
    {
        let requires_grad = parents.iter().any(Var::requires_grad);
        let (parents, backward): (Vec<Var>, Option<BackwardFn>) = if requires_grad {
            (parents, Some(Box::new(backward)))
        } else {
            (Vec::new(), None)
        };
        Var(Rc::new(Node {
            value,
            grad: RefCell::new(None),
            parents,
            backward,
            sink: None,
            requires_grad,
        }))
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Gradient retained on a leaf created with [`Var::input`].
    pub fn grad(&self) -> Option<Tensor> {
        self.0.grad.borrow().clone()
    }

    /// Reshape without copying semantics beyond the value buffer.
    pub fn reshape(&self, shape: &[usize]) -> Var {
        let original = self.shape().to_vec();
        let value = self.value().clone().reshape(shape);
        Var::from_op(value, vec![self.clone()], move |g, _| {
            vec![Some(g.clone().reshape(&original))]
        })
    }

    /// Back-propagates from this node, seeding with a gradient of ones.
    pub fn backward(&self) {
        let seed = Tensor::full(self.shape(), 1.0);
        self.backward_with(seed);
    }

    pub fn backward_with(&self, seed: Tensor) {
        if !self.requires_grad() {
            return;
        }
        assert_eq!(seed.shape(), self.shape(), "seed gradient shape mismatch");
        let order = self.topological_order();
        *self.0.grad.borrow_mut() = Some(seed);
        for var in order.iter().rev() {
            let node = &var.0;
            let is_leaf = node.backward.is_none();
            let grad = if is_leaf {
                node.grad.borrow().clone()
            } else {
                node.grad.borrow_mut().take()
            };
            let Some(grad) = grad else { continue };
            if let Some(param) = &node.sink {
                param.accumulate_grad(&grad);
            }
            if let Some(backward) = &node.backward {
                let parent_grads = backward(&grad, &node.parents);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (parent, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !parent.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.shape(), parent.shape());
                    let mut slot = parent.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.add_assign(&pg),
                        None => *slot = Some(pg),
                    }
                }
            }
        }
    }

    /// Post-order over all nodes that require gradients, iteratively.
    fn topological_order(&self) -> Vec<Var> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Node> = HashSet::new();
        let mut stack: Vec<(Var, usize)> = vec![(self.clone(), 0)];
        visited.insert(Rc::as_ptr(&self.0));
        while let Some((var, next)) = stack.pop() {
            if next < var.0.parents.len() {
                let parent = var.0.parents[next].clone();
                stack.push((var, next + 1));
                if parent.requires_grad() && visited.insert(Rc::as_ptr(&parent.0)) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(var);
            }
        }
        order
    }
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({:?}, requires_grad={})", self.shape(), self.requires_grad())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_subexpression_accumulates() {
        let x = Var::input(Tensor::new(vec![2], vec![1.0, 2.0]));
        let y = crate::add(&x, &x);
        let z = crate::add(&y, &x);
        z.backward();
        assert_eq!(x.grad().unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn param_gradients_accumulate_across_passes() {
        let p = Param::new(Tensor::new(vec![1], vec![5.0]));
        for _ in 0..2 {
            let v = Var::param(&p);
            crate::scale(&v, 2.0).backward();
        }
        assert_eq!(p.grad().data(), &[4.0]);
        p.zero_grad();
        assert_eq!(p.grad().data(), &[0.0]);
    }

    #[test]
    fn constants_do_not_build_a_graph() {
        let x = Var::constant(Tensor::zeros(&[3]));
        let y = crate::relu(&x);
        assert!(!y.requires_grad());
        y.backward();
        assert!(x.grad().is_none());
    }
}
