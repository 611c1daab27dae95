//! Losses and classification metrics.

use crate::error::{Error, Result};
use crate::graph::{BackwardOp, GradGraph, GradStore};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorId};

/// Mean squared error over every element, composed from primitive ops so
/// its gradient needs no dedicated backward rule.
pub fn mse_loss<T: Scalar>(
    g: &mut GradGraph<T>,
    pred: &Tensor<T>,
    target: &Tensor<T>,
) -> Result<Tensor<T>> {
    let diff = g.sub(pred, target)?;
    let sq = g.mul(&diff, &diff)?;
    let total = g.sum_all(&sq)?;
    g.scalar_mul(&total, T::from_f64(1.0 / pred.numel() as f64))
}

/// Mean softmax cross-entropy over rows of `(B, 1, 1, K)` logits. Fused:
/// the forward runs the max-shifted log-sum-exp and the backward replays
/// the saved softmax (`dlogits = (p - onehot) / B`).
pub fn softmax_cross_entropy<T: Scalar>(
    g: &mut GradGraph<T>,
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<Tensor<T>> {
    let s = logits.shape();
    if s.c != 1 || s.h != 1 {
        return Err(Error::invalid(
            "softmax_cross_entropy",
            format!("logits must have shape (B, 1, 1, K), got {s}"),
        ));
    }
    if labels.len() != s.b {
        return Err(Error::invalid(
            "softmax_cross_entropy",
            format!("{} labels for {} rows", labels.len(), s.b),
        ));
    }
    let k = s.w;
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(
            "softmax_cross_entropy",
            format!("label {bad} out of range for {k} classes"),
        ));
    }
    let xd = logits.data();
    let mut probs = vec![T::zero(); s.numel()];
    let mut total = T::zero();
    for b in 0..s.b {
        let row = &xd[b * k..(b + 1) * k];
        let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for (p, &l) in probs[b * k..(b + 1) * k].iter_mut().zip(row) {
            *p = (l - m).exp();
            z = z + *p;
        }
        for p in &mut probs[b * k..(b + 1) * k] {
            *p = *p / z;
        }
        total = total + (z.ln() - (row[labels[b]] - m));
    }
    let inv_b = T::from_f64(1.0 / s.b as f64);
    let rg = g.wants_grad(logits.requires_grad());
    let out = Tensor::from_vec(crate::tensor::Shape::scalar(), vec![total * inv_b], rg);
    if rg {
        g.push(
            &out,
            Box::new(CrossEntropyBack {
                probs,
                labels: labels.to_vec(),
                x: logits.id(),
                k,
                inv_b,
            }),
        );
    }
    Ok(out)
}

/// Row-wise argmax of `(B, 1, 1, K)` logits, first maximum on ties.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let s = logits.shape();
    let k = s.w;
    let d = logits.data();
    (0..s.b * s.c * s.h)
        .map(|row| {
            let r = &d[row * k..(row + 1) * k];
            let mut best = 0;
            for (i, v) in r.iter().enumerate().skip(1) {
                if *v > r[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> f64 {
    let pred = argmax_rows(logits);
    debug_assert_eq!(pred.len(), labels.len());
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

struct CrossEntropyBack<T: Scalar> {
    probs: Vec<T>,
    labels: Vec<usize>,
    x: TensorId,
    k: usize,
    inv_b: T,
}

impl<T: Scalar> BackwardOp<T> for CrossEntropyBack<T> {
    fn backward(&self, out_grad: &[T], grads: &mut GradStore<T>) {
        let g = out_grad[0] * self.inv_b;
        let buf = grads.accum(self.x, self.probs.len());
        for (b, &label) in self.labels.iter().enumerate() {
            for j in 0..self.k {
                let onehot = if j == label { T::one() } else { T::zero() };
                let slot = b * self.k + j;
                buf[slot] = buf[slot] + g * (self.probs[slot] - onehot);
            }
        }
    }
}
