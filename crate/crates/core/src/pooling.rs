//! Classic pooling baselines: windowed max, windowed average, and bare
//! strided subsampling.
//!
//! These are the discrete operations the diffusion-based pooling gets
//! compared against and quantized back onto. Windowed pooling uses no
//! padding: output extent is `floor((in - window) / stride) + 1`.
//! Subsampling keeps coordinates congruent to 0 mod stride (the top-left
//! anchor convention).

use crate::error::{Error, Result};
use crate::graph::{BackwardOp, GradGraph, GradStore};
use crate::ops::ArgmaxBack;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor, TensorId};

/// Window/stride pair for windowed pooling. Both extents are positive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolWindowSpec {
    pub window: usize,
    pub stride: usize,
}

impl PoolWindowSpec {
    pub fn new(window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::invalid(
                "pool_window_spec",
                format!("window and stride must be positive, got {window}x{stride}"),
            ));
        }
        Ok(PoolWindowSpec { window, stride })
    }

    /// Output extent over an input extent, no padding.
    pub fn out_extent(&self, input: usize) -> Result<usize> {
        if self.window > input {
            return Err(Error::invalid(
                "pool_window_spec",
                format!("window {} exceeds input extent {}", self.window, input),
            ));
        }
        Ok((input - self.window) / self.stride + 1)
    }
}

impl<T: Scalar> GradGraph<T> {
    /// Windowed maximum. Gradient routes to each window's argmax, ties
    /// broken by the first maximal cell in row-major scan order.
    pub fn max_pool(&mut self, x: &Tensor<T>, spec: PoolWindowSpec) -> Result<Tensor<T>> {
        let s = x.shape();
        let oh = spec.out_extent(s.h)?;
        let ow = spec.out_extent(s.w)?;
        let rg = self.wants_grad(x.requires_grad());
        let out_shape = Shape::new(s.b, s.c, oh, ow);
        let xd = x.data();
        let mut out = Vec::with_capacity(out_shape.numel());
        let mut arg: Vec<u32> = if rg {
            Vec::with_capacity(out_shape.numel())
        } else {
            Vec::new()
        };
        for b in 0..s.b {
            for c in 0..s.c {
                let base = (b * s.c + c) * s.h * s.w;
                for oy in 0..oh {
                    let y0 = oy * spec.stride;
                    for ox in 0..ow {
                        let x0 = ox * spec.stride;
                        let mut best = xd[base + y0 * s.w + x0];
                        let mut best_at = base + y0 * s.w + x0;
                        for y in y0..y0 + spec.window {
                            let row = base + y * s.w;
                            for xx in x0..x0 + spec.window {
                                let v = xd[row + xx];
                                if v > best {
                                    best = v;
                                    best_at = row + xx;
                                }
                            }
                        }
                        out.push(best);
                        if rg {
                            arg.push(best_at as u32);
                        }
                    }
                }
            }
        }
        let out = Tensor::from_vec(out_shape, out, rg);
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

    /// Windowed mean. Gradient spreads uniformly, `1/(window*window)` per
    /// covered cell; overlapping windows accumulate.
    pub fn avg_pool(&mut self, x: &Tensor<T>, spec: PoolWindowSpec) -> Result<Tensor<T>> {
        let s = x.shape();
        let oh = spec.out_extent(s.h)?;
        let ow = spec.out_extent(s.w)?;
        let rg = self.wants_grad(x.requires_grad());
        let out_shape = Shape::new(s.b, s.c, oh, ow);
        let inv = T::one() / T::from_f64((spec.window * spec.window) as f64);
        let xd = x.data();
        let mut out = Vec::with_capacity(out_shape.numel());
        for b in 0..s.b {
            for c in 0..s.c {
                let base = (b * s.c + c) * s.h * s.w;
                for oy in 0..oh {
                    let y0 = oy * spec.stride;
                    for ox in 0..ow {
                        let x0 = ox * spec.stride;
                        let mut acc = T::zero();
                        for y in y0..y0 + spec.window {
                            let row = base + y * s.w;
                            for xx in x0..x0 + spec.window {
                                acc = acc + xd[row + xx];
                            }
                        }
                        out.push(acc * inv);
                    }
                }
            }
        }
        let out = Tensor::from_vec(out_shape, out, rg);
        if rg {
            self.push(
                &out,
                Box::new(AvgPoolBack {
                    x: x.id(),
                    x_shape: s,
                    spec,
                }),
            );
        }
        Ok(out)
    }

    /// Keeps pixels whose coordinates are multiples of `stride` (top-left
    /// anchor). Gradient scatters back to the kept positions.
    pub fn strided_subsample(&mut self, x: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
        if stride == 0 {
            return Err(Error::invalid("strided_subsample", "stride must be >= 1"));
        }
        let s = x.shape();
        let oh = (s.h - 1) / stride + 1;
        let ow = (s.w - 1) / stride + 1;
        let rg = self.wants_grad(x.requires_grad());
        let out_shape = Shape::new(s.b, s.c, oh, ow);
        let xd = x.data();
        let mut out = Vec::with_capacity(out_shape.numel());
        for b in 0..s.b {
            for c in 0..s.c {
                let base = (b * s.c + c) * s.h * s.w;
                for oy in 0..oh {
                    let row = base + oy * stride * s.w;
                    for ox in 0..ow {
                        out.push(xd[row + ox * stride]);
                    }
                }
            }
        }
        let out = Tensor::from_vec(out_shape, out, rg);
        if rg {
            self.push(
                &out,
                Box::new(SubsampleBack {
                    x: x.id(),
                    x_shape: s,
                    stride,
                }),
            );
        }
        Ok(out)
    }
}

struct AvgPoolBack {
    x: TensorId,
    x_shape: Shape,
    spec: PoolWindowSpec,
}

impl<T: Scalar> BackwardOp<T> for AvgPoolBack {
    fn backward(&self, out_grad: &[T], grads: &mut GradStore<T>) {
        let s = self.x_shape;
        let spec = self.spec;
        let oh = (s.h - spec.window) / spec.stride + 1;
        let ow = (s.w - spec.window) / spec.stride + 1;
        let inv = T::one() / T::from_f64((spec.window * spec.window) as f64);
        let buf = grads.accum(self.x, s.numel());
        let mut o = 0;
        for b in 0..s.b {
            for c in 0..s.c {
                let base = (b * s.c + c) * s.h * s.w;
                for oy in 0..oh {
                    let y0 = oy * spec.stride;
                    for ox in 0..ow {
                        let x0 = ox * spec.stride;
                        let share = out_grad[o] * inv;
                        o += 1;
                        for y in y0..y0 + spec.window {
                            let row = base + y * s.w;
                            for xx in x0..x0 + spec.window {
                                buf[row + xx] = buf[row + xx] + share;
                            }
                        }
                    }
                }
            }
        }
    }
}

struct SubsampleBack {
    x: TensorId,
    x_shape: Shape,
    stride: usize,
}

impl<T: Scalar> BackwardOp<T> for SubsampleBack {
    fn backward(&self, out_grad: &[T], grads: &mut GradStore<T>) {
        let s = self.x_shape;
        let oh = (s.h - 1) / self.stride + 1;
        let ow = (s.w - 1) / self.stride + 1;
        let buf = grads.accum(self.x, s.numel());
        let mut o = 0;
        for b in 0..s.b {
            for c in 0..s.c {
                let base = (b * s.c + c) * s.h * s.w;
                for oy in 0..oh {
                    let row = base + oy * self.stride * s.w;
                    for ox in 0..ow {
                        buf[row + ox * self.stride] = buf[row + ox * self.stride] + out_grad[o];
                        o += 1;
                    }
                }
            }
        }
    }
}
