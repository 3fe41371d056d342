//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A forward pass records one node per primitive; each node carries a
//! closure that maps the output gradient to gradient contributions for
//! its parents. Backward walks the tape in reverse and accumulates.

use crate::error::{CoreError, Result};
use crate::tensor::{Scalar, Tensor};
use std::cell::RefCell;

/// Handle into a tape. Only valid for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    pub(crate) id: usize,
}

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<(usize, Tensor<T>)>>;

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub backward: Option<BackwardFn<T>>,
}

#[derive(Default)]
pub struct Tape<T> {
    pub(crate) nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub(crate) fn push(&self, value: Tensor<T>, backward: Option<BackwardFn<T>>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, backward });
        Var { id: nodes.len() - 1 }
    }

    /// Differentiable leaf (inputs and parameters).
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        self.push(value, None)
    }

    /// Non-differentiable leaf. Gradients flowing into a constant are
    /// accumulated but never surfaced, so the distinction is by use.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, None)
    }

    /// Register a custom primitive. `backward(g)` must return one
    /// gradient tensor per declared input, shaped like that input.
    pub fn custom_op(
        &self,
        inputs: &[Var],
        value: Tensor<T>,
        backward: Box<dyn Fn(&Tensor<T>) -> Vec<Tensor<T>>>,
    ) -> Var {
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        self.push(
            value,
            Some(Box::new(move |g| {
                let grads = backward(g);
                assert_eq!(grads.len(), ids.len(), "custom_op: one gradient per input");
                ids.iter().copied().zip(grads).collect()
            })),
        )
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.id].value.shape().to_vec()
    }

    pub fn numel(&self, v: Var) -> usize {
        self.nodes.borrow()[v.id].value.numel()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Reverse sweep from a scalar loss. Returns one gradient slot per
    /// node; unreached nodes are `None`.
    pub fn backward(&self, loss: Var) -> Result<Vec<Option<Tensor<T>>>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(CoreError::NonScalarLoss(nodes[loss.id].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape().to_vec(), T::one()));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if let Some(back) = &nodes[id].backward {
                for (pid, contrib) in back(&g) {
                    debug_assert!(pid < id, "backward edge must point earlier on the tape");
                    match &mut grads[pid] {
                        Some(acc) => acc.add_in_place(&contrib),
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(grads)
    }
}
