//! Dense tensors with a dynamically recorded reverse-mode gradient graph.
//!
//! Every operation on a [`Tensor`] that has at least one gradient-requiring
//! input records a [`GraphNode`] holding its parents and a backward closure.
//! [`Tensor::backward`] walks that graph in reverse topological order and
//! accumulates gradients into the leaf variables.
//!
//! Tensors are immutable after construction. The only mutable state is the
//! gradient buffer of a leaf variable.

mod conv;
mod ops;
mod scalar;

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use thiserror::Error;

pub use scalar::{Dtype, Scalar};
pub(crate) use scalar::{gemm, MatView};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("{0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

type BackwardFn<S> = Box<dyn Fn(&[S], &[bool]) -> Vec<Option<Vec<S>>> + Send + Sync>;

/// Backward-graph record of one operation.
pub struct GraphNode<S: Scalar> {
    inputs: Vec<Tensor<S>>,
    backward: BackwardFn<S>,
}

struct Inner<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<S>>>,
    node: Option<GraphNode<S>>,
}

/// Reference-counted n-dimensional array. Cloning is cheap and shares storage.
pub struct Tensor<S: Scalar = f64>(Arc<Inner<S>>);

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.0.shape);
        if self.0.data.len() <= 16 {
            d.field("data", &self.0.data);
        }
        d.field("requires_grad", &self.0.requires_grad).finish()
    }
}

thread_local! {
    static NO_GRAD: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` without recording any graph on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Reset(bool);
    impl Drop for Reset {
        fn drop(&mut self) {
            NO_GRAD.with(|c| c.set(self.0));
        }
    }
    let prev = NO_GRAD.with(|c| c.replace(true));
    let _reset = Reset(prev);
    f()
}

fn recording() -> bool {
    !NO_GRAD.with(|c| c.get())
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tensor<S> {
    fn build(shape: Vec<usize>, data: Vec<S>, requires_grad: bool, node: Option<GraphNode<S>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Inner {
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node,
        }))
    }

    fn check_shape(shape: &[usize], len: usize) -> Result<()> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::Contract(format!("shape {shape:?} has a zero extent")));
        }
        if numel(shape) != len {
            return Err(TensorError::Contract(format!(
                "shape {shape:?} needs {} values, got {len}",
                numel(shape)
            )));
        }
        Ok(())
    }

    /// Constant tensor; never receives a gradient.
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        Self::check_shape(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf: `backward` populates its gradient buffer.
    pub fn variable(shape: &[usize], data: Vec<S>) -> Result<Self> {
        Self::check_shape(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![S::zero(); numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    /// Rank-0 constant.
    pub fn scalar(value: S) -> Self {
        Self::build(Vec::new(), vec![value], false, None)
    }

    /// Result of an operation. Records a graph node when any input needs a gradient.
    pub(crate) fn from_op<F>(shape: Vec<usize>, data: Vec<S>, inputs: Vec<Tensor<S>>, backward: F) -> Self
    where
        F: Fn(&[S], &[bool]) -> Vec<Option<Vec<S>>> + Send + Sync + 'static,
    {
        let requires_grad = recording() && inputs.iter().any(|t| t.requires_grad());
        let node = requires_grad.then(|| GraphNode {
            inputs,
            backward: Box::new(backward),
        });
        Self::build(shape, data, requires_grad, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[S] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<S> {
        match self.0.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(TensorError::Contract(format!(
                "item() on tensor of shape {:?}",
                self.0.shape
            ))),
        }
    }

    pub fn grad(&self) -> Option<Vec<S>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock") = None;
    }

    /// Detached copy: same values, no graph, no gradient requirement.
    pub fn detach(&self) -> Self {
        Self::build(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    pub fn ptr_eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    /// Reverse-mode sweep from a one-element `self`.
    ///
    /// Gradients accumulate into leaf buffers across calls; callers zero them
    /// between optimisation steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut grads: HashMap<usize, Vec<S>> = HashMap::new();
        grads.insert(self.id(), vec![S::one()]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            match &t.0.node {
                None => {
                    let mut slot = t.0.grad.lock().expect("grad lock");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        None => *slot = Some(g),
                    }
                }
                Some(node) => {
                    let needs: Vec<bool> = node.inputs.iter().map(Tensor::requires_grad).collect();
                    let parent_grads = (node.backward)(&g, &needs);
                    for ((input, pg), need) in node.inputs.iter().zip(parent_grads).zip(needs) {
                        let Some(pg) = pg else { continue };
                        if !need {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), input.numel());
                        match grads.get_mut(&input.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                            None => {
                                grads.insert(input.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order DFS over gradient-requiring tensors, iterative to avoid deep recursion.
    fn topo_order(&self) -> Vec<Tensor<S>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor<S>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for input in &node.inputs {
                    if input.requires_grad() && !visited.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }

    /// Copies values into another precision. The result is a constant leaf.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        let data = self.0.data.iter().map(|v| T::from_f64_lossy(v.as_f64())).collect();
        Tensor::build(self.0.shape.clone(), data, false, None)
    }
}
