//! Primitive differentiable operations.
//!
//! Elementwise arithmetic, ReLU, pairwise max, reshape, full-sum reduction,
//! and the stride-1 neighborhood maximum that everything pooling-shaped is
//! built from. Each op validates shapes, computes its output, and (when an
//! input requires gradients and the graph is recording) pushes a backward
//! rule onto the tape.
//!
//! Conventions shared by every op in the crate:
//! - subgradients at kinks are zero for ReLU (`relu'(0) = 0`) and
//!   first-argument-wins for `max2`;
//! - window maxima break ties by the first maximal cell in row-major scan
//!   order, and gradient routes to exactly that cell;
//! - windows are clipped at image borders, so a border pixel's neighborhood
//!   contains only distinct in-bounds pixels.

use crate::error::{Error, Result};
use crate::graph::{grad_id, BackwardOp, GradGraph, GradStore};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor, TensorId};

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shapes(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl<T: Scalar> GradGraph<T> {
    /// Elementwise `a + b`.
    pub fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", a, b)?;
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.wants_grad(a.requires_grad() || b.requires_grad());
        let out = Tensor::from_vec(a.shape(), data, rg);
        if rg {
            self.push(
                &out,
                Box::new(AddBack {
                    a: grad_id(a),
                    b: grad_id(b),
                    numel: a.numel(),
                }),
            );
        }
        Ok(out)
    }

    /// Elementwise `a - b`.
    pub fn sub(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", a, b)?;
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let rg = self.wants_grad(a.requires_grad() || b.requires_grad());
        let out = Tensor::from_vec(a.shape(), data, rg);
        if rg {
            self.push(
                &out,
                Box::new(SubBack {
                    a: grad_id(a),
                    b: grad_id(b),
                    numel: a.numel(),
                }),
            );
        }
        Ok(out)
    }

    /// Elementwise `a * b`.
    pub fn mul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", a, b)?;
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.wants_grad(a.requires_grad() || b.requires_grad());
        let out = Tensor::from_vec(a.shape(), data, rg);
        if rg {
            self.push(
                &out,
                Box::new(MulBack {
                    a: a.clone(),
                    b: b.clone(),
                    a_id: grad_id(a),
                    b_id: grad_id(b),
                }),
            );
        }
        Ok(out)
    }

    /// Elementwise maximum of `a` and `b`; ties take `a`.
    pub fn max2(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("max2", a, b)?;
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| if y > x { y } else { x })
            .collect();
        let rg = self.wants_grad(a.requires_grad() || b.requires_grad());
        let out = Tensor::from_vec(a.shape(), data, rg);
        if rg {
            self.push(
                &out,
                Box::new(Max2Back {
                    a: a.clone(),
                    b: b.clone(),
                    a_id: grad_id(a),
                    b_id: grad_id(b),
                }),
            );
        }
        Ok(out)
    }

    /// Elementwise `a + c` for a scalar constant `c`.
    pub fn add_scalar(&mut self, a: &Tensor<T>, c: T) -> Result<Tensor<T>> {
        let data = a.data().iter().map(|&x| x + c).collect();
        let rg = self.wants_grad(a.requires_grad());
        let out = Tensor::from_vec(a.shape(), data, rg);
        if rg {
            self.push(
                &out,
                Box::new(AddScalarBack {
                    a: a.id(),
                    numel: a.numel(),
                }),
            );
        }
        Ok(out)
    }

    /// Elementwise `c * a` for a scalar constant `c`.
    pub fn scalar_mul(&mut self, a: &Tensor<T>, c: T) -> Result<Tensor<T>> {
        let data = a.data().iter().map(|&x| c * x).collect();
        let rg = self.wants_grad(a.requires_grad());
        let out = Tensor::from_vec(a.shape(), data, rg);
        if rg {
            self.push(
                &out,
                Box::new(ScalarMulBack {
                    a: a.id(),
                    numel: a.numel(),
                    c,
                }),
            );
        }
        Ok(out)
    }

    /// Elementwise `max(a, 0)`. The subgradient at 0 is 0.
    pub fn relu(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        let zero = T::zero();
        let data = a
            .data()
            .iter()
            .map(|&x| if x > zero { x } else { zero })
            .collect();
        let rg = self.wants_grad(a.requires_grad());
        let out = Tensor::from_vec(a.shape(), data, rg);
        if rg {
            self.push(
                &out,
                Box::new(ReluBack {
                    x: a.clone(),
                    a_id: a.id(),
                }),
            );
        }
        Ok(out)
    }

    /// Same elements under a new shape with equal element count.
    pub fn reshape(&mut self, a: &Tensor<T>, shape: Shape) -> Result<Tensor<T>> {
        if shape.numel() != a.numel() {
            return Err(Error::invalid(
                "reshape",
                format!("cannot reshape {} into {}", a.shape(), shape),
            ));
        }
        let rg = self.wants_grad(a.requires_grad());
        let out = a.with_shape_shared(shape, rg);
        if rg {
            self.push(
                &out,
                Box::new(ReshapeBack {
                    a: a.id(),
                    numel: a.numel(),
                }),
            );
        }
        Ok(out)
    }

    /// Sum of all elements as a `(1, 1, 1, 1)` tensor.
    pub fn sum_all(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        let total = a.data().iter().copied().sum();
        let rg = self.wants_grad(a.requires_grad());
        let out = Tensor::from_vec(Shape::scalar(), vec![total], rg);
        if rg {
            self.push(
                &out,
                Box::new(SumAllBack {
                    a: a.id(),
                    numel: a.numel(),
                }),
            );
        }
        Ok(out)
    }

    /// Stride-1 maximum over the `(2*radius+1)`-square neighborhood of every
    /// pixel, windows clipped at the borders; output shape equals input
    /// shape. Gradient routes to the first maximal cell in row-major scan
    /// order of each window.
    pub fn neighborhood_max(&mut self, x: &Tensor<T>, radius: usize) -> Result<Tensor<T>> {
        if radius == 0 {
            return Err(Error::invalid("neighborhood_max", "radius must be >= 1"));
        }
        let s = x.shape();
        if s.numel() > u32::MAX as usize {
            return Err(Error::invalid("neighborhood_max", "tensor too large"));
        }
        let rg = self.wants_grad(x.requires_grad());
        let (hh, ww) = (s.h, s.w);
        let xd = x.data();
        let mut out = vec![T::zero(); s.numel()];
        let mut arg: Vec<u32> = if rg {
            Vec::with_capacity(s.numel())
        } else {
            Vec::new()
        };
        for b in 0..s.b {
            for c in 0..s.c {
                let base = (b * s.c + c) * hh * ww;
                for i in 0..hh {
                    let i0 = i.saturating_sub(radius);
                    let i1 = (i + radius).min(hh - 1);
                    for j in 0..ww {
                        let j0 = j.saturating_sub(radius);
                        let j1 = (j + radius).min(ww - 1);
                        let mut best = xd[base + i0 * ww + j0];
                        let mut best_at = base + i0 * ww + j0;
                        for i2 in i0..=i1 {
                            let row = base + i2 * ww;
                            for j2 in j0..=j1 {
                                let v = xd[row + j2];
                                if v > best {
                                    best = v;
                                    best_at = row + j2;
                                }
                            }
                        }
                        out[base + i * ww + j] = best;
                        if rg {
                            arg.push(best_at as u32);
                        }
                    }
                }
            }
        }
        let out = Tensor::from_vec(s, out, rg);
        if rg {
            self.push(
                &out,
                Box::new(ArgmaxBack {
                    x: x.id(),
                    x_numel: s.numel(),
                    arg,
                }),
            );
        }
        Ok(out)
    }
}

struct AddBack {
    a: Option<TensorId>,
    b: Option<TensorId>,
    numel: usize,
}

impl<T: Scalar> BackwardOp<T> for AddBack {
    fn backward(&self, out_grad: &[T], grads: &mut GradStore<T>) {
        for id in [self.a, self.b].into_iter().flatten() {
            let buf = grads.accum(id, self.numel);
            for (d, &g) in buf.iter_mut().zip(out_grad) {
                *d = *d + g;
            }
        }
    }
}

struct SubBack {
    a: Option<TensorId>,
    b: Option<TensorId>,
    numel: usize,
}

impl<T: Scalar> BackwardOp<T> for SubBack {
    fn backward(&self, out_grad: &[T], grads: &mut GradStore<T>) {
        if let Some(id) = self.a {
            let buf = grads.accum(id, self.numel);
            for (d, &g) in buf.iter_mut().zip(out_grad) {
                *d = *d + g;
            }
        }
        if let Some(id) = self.b {
            let buf = grads.accum(id, self.numel);
            for (d, &g) in buf.iter_mut().zip(out_grad) {
                *d = *d - g;
            }
        }
    }
}

struct MulBack<T: Scalar> {
    a: Tensor<T>,
    b: Tensor<T>,
    a_id: Option<TensorId>,
    b_id: Option<TensorId>,
}

impl<T: Scalar> BackwardOp<T> for MulBack<T> {
    fn backward(&self, out_grad: &[T], grads: &mut GradStore<T>) {
        if let Some(id) = self.a_id {
            let buf = grads.accum(id, self.a.numel());
            for ((d, &g), &bv) in buf.iter_mut().zip(out_grad).zip(self.b.data()) {
                *d = *d + g * bv;
            }
        }
        if let Some(id) = self.b_id {
            let buf = grads.accum(id, self.b.numel());
            for ((d, &g), &av) in buf.iter_mut().zip(out_grad).zip(self.a.data()) {
                *d = *d + g * av;
            }
        }
    }
}

struct Max2Back<T: Scalar> {
    a: Tensor<T>,
    b: Tensor<T>,
    a_id: Option<TensorId>,
    b_id: Option<TensorId>,
}

impl<T: Scalar> BackwardOp<T> for Max2Back<T> {
    fn backward(&self, out_grad: &[T], grads: &mut GradStore<T>) {
        // b wins only when strictly larger; ties route to a.
        if let Some(id) = self.a_id {
            let buf = grads.accum(id, self.a.numel());
            for (i, (d, &g)) in buf.iter_mut().zip(out_grad).enumerate() {
                if !(self.b.data()[i] > self.a.data()[i]) {
                    *d = *d + g;
                }
            }
        }
        if let Some(id) = self.b_id {
            let buf = grads.accum(id, self.b.numel());
            for (i, (d, &g)) in buf.iter_mut().zip(out_grad).enumerate() {
                if self.b.data()[i] > self.a.data()[i] {
                    *d = *d + g;
                }
            }
        }
    }
}

struct AddScalarBack {
    a: TensorId,
    numel: usize,
}

impl<T: Scalar> BackwardOp<T> for AddScalarBack {
    fn backward(&self, out_grad: &[T], grads: &mut GradStore<T>) {
        let buf = grads.accum(self.a, self.numel);
        for (d, &g) in buf.iter_mut().zip(out_grad) {
            *d = *d + g;
        }
    }
}

struct ScalarMulBack<T: Scalar> {
    a: TensorId,
    numel: usize,
    c: T,
}

impl<T: Scalar> BackwardOp<T> for ScalarMulBack<T> {
    fn backward(&self, out_grad: &[T], grads: &mut GradStore<T>) {
        let buf = grads.accum(self.a, self.numel);
        for (d, &g) in buf.iter_mut().zip(out_grad) {
            *d = *d + self.c * g;
        }
    }
}

struct ReluBack<T: Scalar> {
    x: Tensor<T>,
    a_id: TensorId,
}

impl<T: Scalar> BackwardOp<T> for ReluBack<T> {
    fn backward(&self, out_grad: &[T], grads: &mut GradStore<T>) {
        let zero = T::zero();
        let buf = grads.accum(self.a_id, self.x.numel());
        for ((d, &g), &xv) in buf.iter_mut().zip(out_grad).zip(self.x.data()) {
            if xv > zero {
                *d = *d + g;
            }
        }
    }
}

struct ReshapeBack {
    a: TensorId,
    numel: usize,
}

impl<T: Scalar> BackwardOp<T> for ReshapeBack {
    fn backward(&self, out_grad: &[T], grads: &mut GradStore<T>) {
        let buf = grads.accum(self.a, self.numel);
        for (d, &g) in buf.iter_mut().zip(out_grad) {
            *d = *d + g;
        }
    }
}

struct SumAllBack {
    a: TensorId,
    numel: usize,
}

impl<T: Scalar> BackwardOp<T> for SumAllBack {
    fn backward(&self, out_grad: &[T], grads: &mut GradStore<T>) {
        let g = out_grad[0];
        let buf = grads.accum(self.a, self.numel);
        for d in buf.iter_mut() {
            *d = *d + g;
        }
    }
}

/// Scatter rule shared by every hard-selection op: one saved argmax per
/// output element, gradient deposited there untouched.
pub(crate) struct ArgmaxBack {
    pub(crate) x: TensorId,
    pub(crate) x_numel: usize,
    pub(crate) arg: Vec<u32>,
}

impl<T: Scalar> BackwardOp<T> for ArgmaxBack {
    fn backward(&self, out_grad: &[T], grads: &mut GradStore<T>) {
        let buf = grads.accum(self.x, self.x_numel);
        for (&a, &g) in self.arg.iter().zip(out_grad) {
            buf[a as usize] = buf[a as usize] + g;
        }
    }
}
