//! Reverse-mode differentiation over an append-only tape.
//!
//! A [`GradGraph`] records one node per executed differentiable operation,
//! in execution order. Because tensors are immutable and every op allocates
//! a fresh output, execution order is already a topological order: walking
//! the tape backwards visits every consumer of a tensor before its producer.
//! [`GradGraph::backward`] seeds the scalar root with 1 and replays the tape
//! in reverse, accumulating gradients per tensor id.
//!
//! Operations live next to their forward implementations (see [`crate::ops`]
//! and the pooling modules); each records a [`BackwardOp`] that captures the
//! saved state its gradient rule needs (input values, argmax indices, ...).
//! A fresh graph is built per training step and dropped with everything it
//! captured.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorId};

/// Gradient rule of one recorded operation.
///
/// `backward` receives the gradient at the op's output and accumulates into
/// the op's differentiable inputs through [`GradStore::accum`]. Ops capture
/// at record time which inputs require gradients (as `Option<TensorId>`) and
/// skip the rest.
pub trait BackwardOp<T: Scalar>: Send {
    fn backward(&self, out_grad: &[T], grads: &mut GradStore<T>);
}

struct Node<T: Scalar> {
    out: TensorId,
    op: Box<dyn BackwardOp<T>>,
}

/// Append-only record of executed differentiable operations.
pub struct GradGraph<T: Scalar> {
    nodes: Vec<Node<T>>,
    recording: bool,
}

impl<T: Scalar> GradGraph<T> {
    /// A graph that records gradient information.
    pub fn new() -> Self {
        GradGraph {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A graph for pure evaluation: ops run normally but record nothing and
    /// mark no outputs as differentiable.
    pub fn inference() -> Self {
        GradGraph {
            nodes: Vec::new(),
            recording: false,
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Whether an op whose inputs require gradients should be recorded.
    #[inline]
    pub(crate) fn wants_grad(&self, any_input_requires_grad: bool) -> bool {
        self.recording && any_input_requires_grad
    }

    pub(crate) fn push(&mut self, out: &Tensor<T>, op: Box<dyn BackwardOp<T>>) {
        debug_assert!(out.requires_grad());
        self.nodes.push(Node { out: out.id(), op });
    }

    /// Reverse pass from a scalar root: returns `d root / d leaf` for every
    /// `requires_grad` leaf reachable from the root. Unreached leaves read as
    /// zero from the returned [`Gradients`].
    pub fn backward(&self, root: &Tensor<T>) -> Result<Gradients<T>> {
        if !root.shape().is_scalar() {
            return Err(Error::invalid(
                "backward",
                format!("root must have shape (1, 1, 1, 1), got {}", root.shape()),
            ));
        }
        if !root.requires_grad() {
            return Err(Error::invalid(
                "backward",
                "root does not require gradients (inference graph or constant lineage)",
            ));
        }
        let mut store = GradStore::new();
        store.accum(root.id(), 1)[0] = T::one();
        for node in self.nodes.iter().rev() {
            // Consumers of `node.out` have already run, so its gradient is
            // complete; remove it so only leaf gradients survive the walk.
            if let Some(g) = store.take(node.out) {
                node.op.backward(&g, &mut store);
            }
        }
        Ok(Gradients { bufs: store.bufs })
    }
}

impl<T: Scalar> Default for GradGraph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-tensor gradient buffers being accumulated during a backward pass.
pub struct GradStore<T: Scalar> {
    bufs: HashMap<TensorId, Vec<T>>,
}

impl<T: Scalar> GradStore<T> {
    fn new() -> Self {
        GradStore {
            bufs: HashMap::new(),
        }
    }

    /// Gradient buffer for `id`, zero-initialized on first touch.
    pub fn accum(&mut self, id: TensorId, numel: usize) -> &mut [T] {
        let buf = self
            .bufs
            .entry(id)
            .or_insert_with(|| vec![T::zero(); numel]);
        debug_assert_eq!(buf.len(), numel);
        buf
    }

    fn take(&mut self, id: TensorId) -> Option<Vec<T>> {
        self.bufs.remove(&id)
    }
}

/// Result of a backward pass: gradients keyed by leaf tensor id.
pub struct Gradients<T: Scalar> {
    bufs: HashMap<TensorId, Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `leaf`, in `leaf`'s shape. Leaves the root
    /// never reached get zeros, per the backward contract.
    pub fn get(&self, leaf: &Tensor<T>) -> Tensor<T> {
        match self.bufs.get(&leaf.id()) {
            Some(buf) => Tensor::from_vec(leaf.shape(), buf.clone(), false),
            None => Tensor::zeros(leaf.shape()),
        }
    }

    /// Whether any gradient reached `leaf`.
    pub fn reached(&self, leaf: &Tensor<T>) -> bool {
        self.bufs.contains_key(&leaf.id())
    }
}

/// `Some(id)` if gradients should flow into this tensor.
#[inline]
pub(crate) fn grad_id<T: Scalar>(t: &Tensor<T>) -> Option<TensorId> {
    t.requires_grad().then(|| t.id())
}
