//! Dense f64 tensor with a reverse-mode autodiff graph.
//!
//! The graph is define-by-run: every primitive records its parents and a
//! backward closure on the output tensor. `backward()` walks reachable nodes
//! in reverse creation order (a valid reverse topological order, since a
//! node is always created after its parents) and accumulates gradients into
//! every tensor with `requires_grad`. Gradients accumulate across calls;
//! callers zero them between steps.

mod checkpoint;
mod gradcheck;
mod ops;
#[cfg(test)]
mod tests;

pub use checkpoint::{load_checkpoint, load_into, save_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, grad_check_params, GradCheckReport};

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Result, SaaError};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Backward rule: receives the upstream gradient of the output (flat) and the
/// parent tensors, and accumulates contributions into each parent.
type BackFn = Box<dyn Fn(&[f64], &[Tensor])>;

struct Node {
    parents: Vec<Tensor>,
    back: BackFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    node: Option<Node>,
}

#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn make(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, node: Option<Node>) -> Tensor {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                node,
            }),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != data.len() {
            return Err(SaaError::shape(
                "new",
                format!("shape {:?} implies {} elements, got {}", shape, numel_of(shape), data.len()),
            ));
        }
        Ok(Tensor::make(data, shape.to_vec(), false, None))
    }

    /// Trainable leaf: participates in backward, receives gradient.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != data.len() {
            return Err(SaaError::shape(
                "param",
                format!("shape {:?} implies {} elements, got {}", shape, numel_of(shape), data.len()),
            ));
        }
        Ok(Tensor::make(data, shape.to_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::make(vec![0.0; numel_of(shape)], shape.to_vec(), false, None)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::make(vec![v], vec![], false, None)
    }

    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        back: BackFn,
    ) -> Tensor {
        let requires_grad = parents.iter().any(|p| p.inner.requires_grad);
        let node = if requires_grad { Some(Node { parents, back }) } else { None };
        Tensor::make(data, shape, requires_grad, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.inner.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor with {} elements", self.numel());
        self.inner.data.borrow()[0]
    }

    /// In-place data mutation, for optimizer updates and finite differences.
    /// Only valid on leaves; mutating an op output would desynchronize the
    /// recorded graph.
    pub fn set_data(&self, f: impl FnOnce(&mut Vec<f64>)) {
        debug_assert!(self.inner.node.is_none(), "set_data on non-leaf tensor");
        f(&mut self.inner.data.borrow_mut());
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Same data, cut off from the graph. Gradient does not flow through.
    pub fn detach(&self) -> Tensor {
        Tensor::make(self.to_vec(), self.inner.shape.clone(), false, None)
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        if !self.inner.requires_grad {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (b, v) in buf.iter_mut().zip(g) {
                    *b += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate (+=) into
    /// every reachable tensor with `requires_grad`; calling twice without
    /// zeroing doubles them.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(SaaError::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape()),
            ));
        }
        if !self.inner.requires_grad {
            return Ok(());
        }
        // Collect reachable graph nodes. Creation ids are monotone, so
        // descending id order is a valid reverse topological order.
        let mut seen: HashMap<u64, Tensor> = HashMap::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if seen.contains_key(&t.inner.id) {
                continue;
            }
            if let Some(node) = &t.inner.node {
                for p in &node.parents {
                    if p.inner.requires_grad {
                        stack.push(p.clone());
                    }
                }
            }
            seen.insert(t.inner.id, t);
        }
        let mut order: Vec<Tensor> = seen.into_values().collect();
        order.sort_by(|a, b| b.inner.id.cmp(&a.inner.id));

        self.accumulate_grad(&[1.0]);
        for t in &order {
            let Some(node) = &t.inner.node else { continue };
            // Consume the intermediate grad so only leaves accumulate
            // across repeated backward calls.
            let g = t.inner.grad.borrow_mut().take();
            let Some(g) = g else { continue };
            (node.back)(&g, &node.parents);
        }
        Ok(())
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("data", &self.inner.data.borrow())
            .finish()
    }
}
