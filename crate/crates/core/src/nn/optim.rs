//! First-order optimizers over lists of parameter tensors.
//!
//! Parameters are identified by their position in the list, which must stay
//! fixed across steps; each step replaces the tensors with updated ones
//! (fresh ids, same shapes), so stale graph references can never observe a
//! mutation.

use crate::error::{Error, Result};
use crate::graph::Gradients;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The update rule; learning rate lives on the `Optimizer` itself.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    /// Adam with bias correction.
    Adam { beta1: f64, beta2: f64, eps: f64 },
    /// SGD with a classic momentum buffer: `buf = momentum * buf + g`.
    SgdMomentum { momentum: f64 },
}

/// Optimizer state: one moment slot per parameter index, lazily shaped.
pub struct Optimizer<T: Scalar> {
    kind: OptimizerKind,
    lr: T,
    step: u64,
    slots: Vec<Slot<T>>,
    /// Per-parameter step-size multipliers; indices past the end scale by 1.
    scales: Vec<T>,
}

struct Slot<T> {
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> Optimizer<T> {
    /// Adam with the standard defaults (0.9, 0.999, 1e-8).
    pub fn adam(lr: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            lr: T::from_f64(lr),
            step: 0,
            slots: Vec::new(),
            scales: Vec::new(),
        }
    }

    pub fn sgd_momentum(lr: f64, momentum: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::SgdMomentum { momentum },
            lr: T::from_f64(lr),
            step: 0,
            slots: Vec::new(),
            scales: Vec::new(),
        }
    }

    /// Multiplies the step size for one parameter index. Parameters with very
    /// different useful ranges (pooling strengths span a few units, weights
    /// move hundredths) cannot share one step size without freezing the
    /// wide-range ones, since each step displaces a coordinate by at most
    /// roughly the learning rate.
    pub fn set_param_scale(&mut self, index: usize, scale: f64) {
        if self.scales.len() <= index {
            self.scales.resize(index + 1, T::one());
        }
        self.scales[index] = T::from_f64(scale);
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `params[i]` is replaced by its updated tensor;
    /// unreached parameters (zero gradient) still advance their moments.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &Gradients<T>) -> Result<()> {
        if self.slots.is_empty() {
            self.slots = params
                .iter()
                .map(|p| Slot {
                    m: vec![T::zero(); p.numel()],
                    v: vec![T::zero(); p.numel()],
                })
                .collect();
        }
        if self.slots.len() != params.len() {
            return Err(Error::invalid(
                "optimizer_step",
                format!(
                    "optimizer was built for {} parameters, got {}",
                    self.slots.len(),
                    params.len()
                ),
            ));
        }
        self.step += 1;
        for (at, (p, slot)) in params.iter_mut().zip(&mut self.slots).enumerate() {
            if p.numel() != slot.m.len() {
                return Err(Error::invalid(
                    "optimizer_step",
                    "parameter changed size between steps",
                ));
            }
            let lr = self.lr * self.scales.get(at).copied().unwrap_or_else(T::one);
            let g = grads.get(p);
            let gd = g.data();
            let mut next = p.data().to_vec();
            match self.kind {
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let b1 = T::from_f64(beta1);
                    let b2 = T::from_f64(beta2);
                    let one = T::one();
                    // Bias corrections use the global step count.
                    let c1 = T::from_f64(1.0 - beta1.powi(self.step as i32));
                    let c2 = T::from_f64(1.0 - beta2.powi(self.step as i32));
                    let eps = T::from_f64(eps);
                    for i in 0..next.len() {
                        slot.m[i] = b1 * slot.m[i] + (one - b1) * gd[i];
                        slot.v[i] = b2 * slot.v[i] + (one - b2) * gd[i] * gd[i];
                        let mhat = slot.m[i] / c1;
                        let vhat = slot.v[i] / c2;
                        next[i] = next[i] - lr * mhat / (vhat.sqrt() + eps);
                    }
                }
                OptimizerKind::SgdMomentum { momentum } => {
                    let mu = T::from_f64(momentum);
                    for i in 0..next.len() {
                        slot.m[i] = mu * slot.m[i] + gd[i];
                        next[i] = next[i] - lr * slot.m[i];
                    }
                }
            }
            *p = Tensor::from_vec(p.shape(), next, true);
        }
        Ok(())
    }
}
