//! Dense and valid-convolution layers, fused forward/backward.
//!
//! Inner loops are written as row-wise multiply-accumulates over contiguous
//! slices so they vectorize without reassociating float sums: every
//! reduction runs in a fixed order, keeping results bit-reproducible.

use crate::error::{Error, Result};
use crate::graph::{grad_id, BackwardOp, GradGraph, GradStore};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor, TensorId};

/// Dot product with four independent accumulators: breaks the add latency
/// chain while keeping a fixed summation order.
pub(crate) fn dot4<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let (a4, at) = a.split_at(a.len() - a.len() % 4);
    let (b4, bt) = b.split_at(a4.len());
    for (ca, cb) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] = acc[k] + ca[k] * cb[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in at.iter().zip(bt) {
        tail = tail + *x * *y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail
}

fn check_bias<T: Scalar>(op: &'static str, bias: &Tensor<T>, units: usize) -> Result<()> {
    let s = bias.shape();
    if s.b != 1 || s.c != 1 || s.h != 1 || s.w != units {
        return Err(Error::invalid(
            op,
            format!("bias must have shape (1, 1, 1, {units}), got {s}"),
        ));
    }
    Ok(())
}

impl<T: Scalar> GradGraph<T> {
    /// Valid 2d convolution, stride 1. `weight` has shape
    /// `(out_channels, in_channels, kh, kw)`, `bias` `(1, 1, 1, out_channels)`.
    pub fn conv2d(
        &mut self,
        x: &Tensor<T>,
        weight: &Tensor<T>,
        bias: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let xs = x.shape();
        let ws = weight.shape();
        if ws.c != xs.c {
            return Err(Error::shapes("conv2d", xs, ws));
        }
        if ws.h > xs.h || ws.w > xs.w {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel {ws} larger than input {xs}"),
            ));
        }
        check_bias("conv2d", bias, ws.b)?;
        let (oc, ic, kh, kw) = (ws.b, ws.c, ws.h, ws.w);
        let (oh, ow) = (xs.h - kh + 1, xs.w - kw + 1);
        let out_shape = Shape::new(xs.b, oc, oh, ow);
        let xd = x.data();
        let wd = weight.data();
        let bd = bias.data();
        let mut out = vec![T::zero(); out_shape.numel()];
        for b in 0..xs.b {
            for o in 0..oc {
                let obase = (b * oc + o) * oh * ow;
                out[obase..obase + oh * ow].fill(bd[o]);
                for i in 0..ic {
                    let xbase = (b * xs.c + i) * xs.h * xs.w;
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let w = wd[((o * ic + i) * kh + ki) * kw + kj];
                            for y in 0..oh {
                                let orow = obase + y * ow;
                                let xrow = xbase + (y + ki) * xs.w + kj;
                                for xcol in 0..ow {
                                    out[orow + xcol] = out[orow + xcol] + w * xd[xrow + xcol];
                                }
                            }
                        }
                    }
                }
            }
        }
        let rg =
            self.wants_grad(x.requires_grad() || weight.requires_grad() || bias.requires_grad());
        let out = Tensor::from_vec(out_shape, out, rg);
        if rg {
            self.push(
                &out,
                Box::new(Conv2dBack {
                    x: x.clone(),
                    w: weight.clone(),
                    x_id: grad_id(x),
                    w_id: grad_id(weight),
                    b_id: grad_id(bias),
                }),
            );
        }
        Ok(out)
    }

    /// Dense layer on flattened rows: input `(B, 1, 1, in)`, `weight`
    /// `(1, 1, out, in)`, `bias` `(1, 1, 1, out)`, output `(B, 1, 1, out)`.
    pub fn linear(
        &mut self,
        x: &Tensor<T>,
        weight: &Tensor<T>,
        bias: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let xs = x.shape();
        let ws = weight.shape();
        if xs.c != 1 || xs.h != 1 {
            return Err(Error::invalid(
                "linear",
                format!("input must be flattened to (B, 1, 1, features), got {xs}"),
            ));
        }
        if ws.b != 1 || ws.c != 1 || ws.w != xs.w {
            return Err(Error::shapes("linear", xs, ws));
        }
        let (units, feats) = (ws.h, ws.w);
        check_bias("linear", bias, units)?;
        let xd = x.data();
        let wd = weight.data();
        let bd = bias.data();
        let out_shape = Shape::new(xs.b, 1, 1, units);
        let mut out = Vec::with_capacity(out_shape.numel());
        for b in 0..xs.b {
            let row = &xd[b * feats..(b + 1) * feats];
            for o in 0..units {
                out.push(bd[o] + dot4(row, &wd[o * feats..(o + 1) * feats]));
            }
        }
        let rg =
            self.wants_grad(x.requires_grad() || weight.requires_grad() || bias.requires_grad());
        let out = Tensor::from_vec(out_shape, out, rg);
        if rg {
            self.push(
                &out,
                Box::new(LinearBack {
                    x: x.clone(),
                    w: weight.clone(),
                    x_id: grad_id(x),
                    w_id: grad_id(weight),
                    b_id: grad_id(bias),
                }),
            );
        }
        Ok(out)
    }
}

struct Conv2dBack<T: Scalar> {
    x: Tensor<T>,
    w: Tensor<T>,
    x_id: Option<TensorId>,
    w_id: Option<TensorId>,
    b_id: Option<TensorId>,
}

impl<T: Scalar> BackwardOp<T> for Conv2dBack<T> {
    fn backward(&self, out_grad: &[T], grads: &mut GradStore<T>) {
        let xs = self.x.shape();
        let ws = self.w.shape();
        let (oc, ic, kh, kw) = (ws.b, ws.c, ws.h, ws.w);
        let (oh, ow) = (xs.h - kh + 1, xs.w - kw + 1);
        let xd = self.x.data();
        let wd = self.w.data();
        if let Some(xid) = self.x_id {
            let dx = grads.accum(xid, xs.numel());
            for b in 0..xs.b {
                for o in 0..oc {
                    let obase = (b * oc + o) * oh * ow;
                    for i in 0..ic {
                        let xbase = (b * xs.c + i) * xs.h * xs.w;
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let w = wd[((o * ic + i) * kh + ki) * kw + kj];
                                for y in 0..oh {
                                    let orow = obase + y * ow;
                                    let xrow = xbase + (y + ki) * xs.w + kj;
                                    for xcol in 0..ow {
                                        dx[xrow + xcol] =
                                            dx[xrow + xcol] + w * out_grad[orow + xcol];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if let Some(wid) = self.w_id {
            let dw = grads.accum(wid, ws.numel());
            for b in 0..xs.b {
                for o in 0..oc {
                    let obase = (b * oc + o) * oh * ow;
                    for i in 0..ic {
                        let xbase = (b * xs.c + i) * xs.h * xs.w;
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let mut acc = T::zero();
                                for y in 0..oh {
                                    let orow = obase + y * ow;
                                    let xrow = xbase + (y + ki) * xs.w + kj;
                                    acc = acc
                                        + dot4(&out_grad[orow..orow + ow], &xd[xrow..xrow + ow]);
                                }
                                let slot = ((o * ic + i) * kh + ki) * kw + kj;
                                dw[slot] = dw[slot] + acc;
                            }
                        }
                    }
                }
            }
        }
        if let Some(bid) = self.b_id {
            let db = grads.accum(bid, oc);
            for b in 0..xs.b {
                for o in 0..oc {
                    let obase = (b * oc + o) * oh * ow;
                    let mut acc = T::zero();
                    for g in &out_grad[obase..obase + oh * ow] {
                        acc = acc + *g;
                    }
                    db[o] = db[o] + acc;
                }
            }
        }
    }
}

struct LinearBack<T: Scalar> {
    x: Tensor<T>,
    w: Tensor<T>,
    x_id: Option<TensorId>,
    w_id: Option<TensorId>,
    b_id: Option<TensorId>,
}

impl<T: Scalar> BackwardOp<T> for LinearBack<T> {
    fn backward(&self, out_grad: &[T], grads: &mut GradStore<T>) {
        let xs = self.x.shape();
        let ws = self.w.shape();
        let (units, feats) = (ws.h, ws.w);
        let xd = self.x.data();
        let wd = self.w.data();
        if let Some(xid) = self.x_id {
            let dx = grads.accum(xid, xs.numel());
            for b in 0..xs.b {
                let drow = &mut dx[b * feats..(b + 1) * feats];
                for o in 0..units {
                    let g = out_grad[b * units + o];
                    let wrow = &wd[o * feats..(o + 1) * feats];
                    for (d, w) in drow.iter_mut().zip(wrow) {
                        *d = *d + g * *w;
                    }
                }
            }
        }
        if let Some(wid) = self.w_id {
            let dw = grads.accum(wid, ws.numel());
            for b in 0..xs.b {
                let xrow = &xd[b * feats..(b + 1) * feats];
                for o in 0..units {
                    let g = out_grad[b * units + o];
                    let wrow = &mut dw[o * feats..(o + 1) * feats];
                    for (d, x) in wrow.iter_mut().zip(xrow) {
                        *d = *d + g * *x;
                    }
                }
            }
        }
        if let Some(bid) = self.b_id {
            let db = grads.accum(bid, units);
            for b in 0..xs.b {
                for o in 0..units {
                    db[o] = db[o] + out_grad[b * units + o];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot4_matches_sequential_sum() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| (i as f64).sin()).collect();
        let want: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot4(&a, &b) - want).abs() < 1e-12);
        assert_eq!(dot4::<f64>(&[], &[]), 0.0);
        assert_eq!(dot4(&[2.0], &[3.0]), 6.0);
    }

    #[test]
    fn conv2d_matches_direct_summation() {
        // 1x1 batch/channel, 3x3 input, 2x2 kernel, hand-computed.
        let x = Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &[7.0, 8.0, 9.0]]).unwrap();
        let w = Tensor::new(Shape::new(1, 1, 2, 2), vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        let bias = Tensor::new(Shape::new(1, 1, 1, 1), vec![0.5]).unwrap();
        let mut g = GradGraph::inference();
        let out = g.conv2d(&x, &w, &bias).unwrap();
        // out[i][j] = x[i][j] - x[i+1][j+1] + 0.5 = -4 + 0.5 everywhere.
        assert_eq!(out.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(out.data(), &[-3.5, -3.5, -3.5, -3.5]);
    }

    #[test]
    fn conv2d_matches_brute_force_on_random_shapes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let xs = Shape::new(2, 3, 6, 5);
        let ws = Shape::new(4, 3, 3, 2);
        let x = Tensor::from_fn(xs, |_, _, _, _| rng.gen_range(-1.0..1.0));
        let w = Tensor::from_fn(ws, |_, _, _, _| rng.gen_range(-1.0..1.0));
        let bias = Tensor::from_fn(Shape::new(1, 1, 1, 4), |_, _, _, o| o as f64 * 0.1);
        let mut g = GradGraph::inference();
        let out = g.conv2d(&x, &w, &bias).unwrap();
        for b in 0..2 {
            for o in 0..4 {
                for y in 0..4 {
                    for xcol in 0..4 {
                        let mut want = bias.at(0, 0, 0, o);
                        for i in 0..3 {
                            for ki in 0..3 {
                                for kj in 0..2 {
                                    want += w.at(o, i, ki, kj) * x.at(b, i, y + ki, xcol + kj);
                                }
                            }
                        }
                        let got = out.at(b, o, y, xcol);
                        assert!((got - want).abs() < 1e-12, "({b},{o},{y},{xcol})");
                    }
                }
            }
        }
    }

    #[test]
    fn conv2d_gradients_match_hand_derivation() {
        // Scalar output: 2x2 input convolved with 2x2 kernel.
        // out = sum(w * x) + bias, so dx = w, dw = x, db = 1.
        let x = Tensor::param(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::param(Shape::new(1, 1, 2, 2), vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let bias = Tensor::param(Shape::new(1, 1, 1, 1), vec![0.0]).unwrap();
        let mut g = GradGraph::new();
        let out = g.conv2d(&x, &w, &bias).unwrap();
        let root = g.sum_all(&out).unwrap();
        let grads = g.backward(&root).unwrap();
        assert_eq!(grads.get(&x).data(), w.data());
        assert_eq!(grads.get(&w).data(), x.data());
        assert_eq!(grads.get(&bias).data(), &[1.0]);
    }

    #[test]
    fn linear_computes_rows_times_weights() {
        let x = Tensor::new(Shape::new(2, 1, 1, 3), vec![1.0, 0.0, 2.0, 0.0, 1.0, 0.0]).unwrap();
        let w = Tensor::new(Shape::new(1, 1, 2, 3), vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        let bias = Tensor::new(Shape::new(1, 1, 1, 2), vec![0.0, 10.0]).unwrap();
        let mut g = GradGraph::inference();
        let out = g.linear(&x, &w, &bias).unwrap();
        assert_eq!(out.data(), &[7.0, 11.0, 2.0, 10.0]);
    }

    #[test]
    fn linear_gradients_match_hand_derivation() {
        // One row, one unit: out = w . x + b.
        let x = Tensor::param(Shape::new(1, 1, 1, 2), vec![3.0, 4.0]).unwrap();
        let w = Tensor::param(Shape::new(1, 1, 1, 2), vec![0.5, -2.0]).unwrap();
        let bias = Tensor::param(Shape::new(1, 1, 1, 1), vec![1.0]).unwrap();
        let mut g = GradGraph::new();
        let out = g.linear(&x, &w, &bias).unwrap();
        assert_eq!(out.data(), &[-5.5]);
        let root = g.sum_all(&out).unwrap();
        let grads = g.backward(&root).unwrap();
        assert_eq!(grads.get(&x).data(), &[0.5, -2.0]);
        assert_eq!(grads.get(&w).data(), &[3.0, 4.0]);
        assert_eq!(grads.get(&bias).data(), &[1.0]);
    }

    #[test]
    fn layer_shape_mismatches_are_rejected() {
        let mut g = GradGraph::<f64>::inference();
        let x = Tensor::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::zeros(Shape::new(3, 1, 2, 2)); // wrong in_channels
        let bias = Tensor::zeros(Shape::new(1, 1, 1, 3));
        assert!(g.conv2d(&x, &w, &bias).is_err());

        let flat = Tensor::zeros(Shape::new(1, 1, 1, 4));
        let lw = Tensor::zeros(Shape::new(1, 1, 2, 5)); // wrong features
        let lb = Tensor::zeros(Shape::new(1, 1, 1, 2));
        assert!(g.linear(&flat, &lw, &lb).is_err());
        let bad_bias = Tensor::zeros(Shape::new(1, 1, 1, 3));
        let lw4 = Tensor::zeros(Shape::new(1, 1, 2, 4));
        assert!(g.linear(&flat, &lw4, &bad_bias).is_err());
    }
}
