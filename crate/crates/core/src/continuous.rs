//! Pooling as iterated nonlinear diffusion.
//!
//! One step moves every pixel toward the larger values in its 3x3
//! neighborhood, scaled by a pooling strength `s`:
//!
//! - sum variant: `out = x + s * sum(max(x_n - x, 0))` over the in-bounds
//!   neighbors `x_n`;
//! - max variant: `out = (1 - s) * x + s * M` with `M` the in-bounds window
//!   maximum (center included).
//!
//! Iterating the step widens the receptive field by one ring per iteration,
//! and the per-iteration, per-channel strengths are ordinary differentiable
//! parameters, so the effective pooling range is learnable. At `s = 1` the
//! max variant is written in a form that reproduces the discrete
//! neighborhood maximum bit for bit, and both variants are bitwise identity
//! at `s = 0`; these two endpoints anchor the equivalence and quantization
//! guarantees elsewhere in the crate.
//!
//! Stability: outputs never decrease, and stay bounded by the pixel's own
//! 3x3 input-neighborhood maximum for `s` in `[0, 1]` (max variant) or
//! `[0, 1/8]` (sum variant, at most 8 in-bounds neighbors).

use crate::error::{Error, Result};
use crate::graph::{grad_id, BackwardOp, GradGraph, GradStore};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor, TensorId};

/// Which Euler discretization a step uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepVariant {
    /// Accumulates all positive neighbor differences.
    Sum,
    /// Takes only the largest positive neighbor difference.
    Max,
}

/// Spatial reduction applied after the diffusion iterations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Downsample {
    /// Windowed max with window = stride.
    MaxPool,
    /// Windowed mean with window = stride.
    AvgPool,
    /// Bare strided subsampling, top-left anchor.
    Subsample,
    /// Keep full resolution.
    None,
}

/// Static configuration of one continuous pooling layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContinuousPoolSpec {
    pub iterations: usize,
    pub variant: StepVariant,
    pub downsample: Downsample,
    pub stride: usize,
}

impl ContinuousPoolSpec {
    pub fn new(
        iterations: usize,
        variant: StepVariant,
        downsample: Downsample,
        stride: usize,
    ) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::invalid(
                "continuous_pool_spec",
                "iterations must be >= 1",
            ));
        }
        if stride == 0 {
            return Err(Error::invalid(
                "continuous_pool_spec",
                "stride must be >= 1",
            ));
        }
        if downsample == Downsample::None && stride != 1 {
            return Err(Error::invalid(
                "continuous_pool_spec",
                format!("downsample none requires stride 1, got {stride}"),
            ));
        }
        Ok(ContinuousPoolSpec {
            iterations,
            variant,
            downsample,
            stride,
        })
    }

    /// The drop-in replacement for a stride-2 max pooling layer: diffusion
    /// iterations followed by windowed max with window = stride = 2.
    pub fn drop_in(iterations: usize, variant: StepVariant) -> Result<Self> {
        Self::new(iterations, variant, Downsample::MaxPool, 2)
    }

    /// This spec with the downsample stripped, for probe measurements.
    fn full_resolution(&self) -> ContinuousPoolSpec {
        ContinuousPoolSpec {
            iterations: self.iterations,
            variant: self.variant,
            downsample: Downsample::None,
            stride: 1,
        }
    }
}

/// Per-iteration, per-channel pooling strengths, stored as a `(1, 1, N, C)`
/// tensor so the whole schedule is one optimizable parameter. Values are
/// deliberately unclamped: trained strengths can and do exceed 1.
#[derive(Clone, Debug)]
pub struct PoolStrengthSchedule<T: Scalar> {
    tensor: Tensor<T>,
}

impl<T: Scalar> PoolStrengthSchedule<T> {
    /// A constant schedule; `trainable` marks it as a differentiation leaf.
    pub fn constant(iterations: usize, channels: usize, value: f64, trainable: bool) -> Self {
        let shape = Shape::new(1, 1, iterations, channels);
        let data = vec![T::from_f64(value); shape.numel()];
        PoolStrengthSchedule {
            tensor: if trainable {
                Tensor::param(shape, data).expect("shape/data agree")
            } else {
                Tensor::new(shape, data).expect("shape/data agree")
            },
        }
    }

    /// Schedule from explicit rows, one per iteration, one value per channel.
    pub fn from_rows(rows: &[&[f64]], trainable: bool) -> Result<Self> {
        let n = rows.len();
        let c = rows.first().map_or(0, |r| r.len());
        if n == 0 || c == 0 {
            return Err(Error::invalid(
                "pool_strength_schedule",
                "schedule needs at least one iteration and one channel",
            ));
        }
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::invalid(
                "pool_strength_schedule",
                "schedule rows differ in channel count",
            ));
        }
        let mut data = Vec::with_capacity(n * c);
        for row in rows {
            data.extend(row.iter().map(|&v| T::from_f64(v)));
        }
        let shape = Shape::new(1, 1, n, c);
        let tensor = if trainable {
            Tensor::param(shape, data)?
        } else {
            Tensor::new(shape, data)?
        };
        Ok(PoolStrengthSchedule { tensor })
    }

    /// Wraps an existing `(1, 1, N, C)` tensor (e.g. a checkpointed one).
    pub fn from_tensor(tensor: Tensor<T>) -> Result<Self> {
        let s = tensor.shape();
        if s.b != 1 || s.c != 1 || s.h == 0 || s.w == 0 {
            return Err(Error::invalid(
                "pool_strength_schedule",
                format!("expected shape (1, 1, iterations, channels), got {s}"),
            ));
        }
        Ok(PoolStrengthSchedule { tensor })
    }

    pub fn iterations(&self) -> usize {
        self.tensor.shape().h
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape().w
    }

    /// Strength for iteration `t`, channel `c`.
    pub fn value(&self, t: usize, c: usize) -> T {
        self.tensor.at(0, 0, t, c)
    }

    /// The backing parameter tensor.
    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }
}

/// Row-major offsets of the 8 neighbors in a 3x3 window.
const NEIGHBORS: [(i64, i64); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

fn check_step_args<T: Scalar>(
    op: &'static str,
    x: &Tensor<T>,
    schedule: &PoolStrengthSchedule<T>,
    t: usize,
) -> Result<()> {
    if schedule.channels() != x.shape().c {
        return Err(Error::invalid(
            op,
            format!(
                "schedule has {} channels but input {} has {}",
                schedule.channels(),
                x.shape(),
                x.shape().c
            ),
        ));
    }
    if t >= schedule.iterations() {
        return Err(Error::invalid(
            op,
            format!(
                "iteration {t} out of range for a {}-step schedule",
                schedule.iterations()
            ),
        ));
    }
    Ok(())
}

impl<T: Scalar> GradGraph<T> {
    /// One sum-variant diffusion step using iteration `t` of the schedule:
    /// every pixel gains `s` times the sum of its positive neighbor
    /// differences. Differentiable in the input and the schedule row.
    pub fn diffusion_step_sum(
        &mut self,
        x: &Tensor<T>,
        schedule: &PoolStrengthSchedule<T>,
        t: usize,
    ) -> Result<Tensor<T>> {
        check_step_args("diffusion_step_sum", x, schedule, t)?;
        let s = x.shape();
        let (hh, ww) = (s.h, s.w);
        let xd = x.data();
        let mut out = vec![T::zero(); s.numel()];
        for b in 0..s.b {
            for c in 0..s.c {
                let strength = schedule.value(t, c);
                let base = (b * s.c + c) * hh * ww;
                for i in 0..hh {
                    for j in 0..ww {
                        let xc = xd[base + i * ww + j];
                        let mut acc = T::zero();
                        for (di, dj) in NEIGHBORS {
                            let ni = i as i64 + di;
                            let nj = j as i64 + dj;
                            if ni >= 0 && nj >= 0 && (ni as usize) < hh && (nj as usize) < ww {
                                let d = xd[base + ni as usize * ww + nj as usize] - xc;
                                if d > T::zero() {
                                    acc = acc + d;
                                }
                            }
                        }
                        out[base + i * ww + j] = xc + strength * acc;
                    }
                }
            }
        }
        let rg = self.wants_grad(x.requires_grad() || schedule.tensor().requires_grad());
        let out = Tensor::from_vec(s, out, rg);
        if rg {
            self.push(
                &out,
                Box::new(StepSumBack {
                    x: x.clone(),
                    sched: schedule.tensor().clone(),
                    t,
                    x_id: grad_id(x),
                    sched_id: grad_id(schedule.tensor()),
                }),
            );
        }
        Ok(out)
    }

    /// One max-variant diffusion step using iteration `t` of the schedule:
    /// `out = x + s * (M - x)` with `M` the in-bounds 3x3 window maximum
    /// (center included, first-in-row-major tie rule). `s = 1` short-circuits
    /// to `M`, making the step bitwise equal to the discrete neighborhood
    /// maximum there; `s = 0` is bitwise identity, and any pixel equal to
    /// its window maximum is returned bitwise unchanged.
    pub fn diffusion_step_max(
        &mut self,
        x: &Tensor<T>,
        schedule: &PoolStrengthSchedule<T>,
        t: usize,
    ) -> Result<Tensor<T>> {
        check_step_args("diffusion_step_max", x, schedule, t)?;
        let s = x.shape();
        if s.numel() > u32::MAX as usize {
            return Err(Error::invalid("diffusion_step_max", "tensor too large"));
        }
        let (hh, ww) = (s.h, s.w);
        let xd = x.data();
        let rg = self.wants_grad(x.requires_grad() || schedule.tensor().requires_grad());
        let mut out = vec![T::zero(); s.numel()];
        let mut arg: Vec<u32> = if rg {
            Vec::with_capacity(s.numel())
        } else {
            Vec::new()
        };
        let one = T::one();
        for b in 0..s.b {
            for c in 0..s.c {
                let strength = schedule.value(t, c);
                let exact = strength == one;
                let base = (b * s.c + c) * hh * ww;
                for i in 0..hh {
                    let i0 = i.saturating_sub(1);
                    let i1 = (i + 1).min(hh - 1);
                    for j in 0..ww {
                        let j0 = j.saturating_sub(1);
                        let j1 = (j + 1).min(ww - 1);
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
                        let here = base + i * ww + j;
                        // `x + s*(M - x)` rather than `(1-s)*x + s*M`: the
                        // former is bitwise x wherever x is its own window
                        // maximum (fixed points stay fixed, the global
                        // maximum never drifts) and never exceeds M for
                        // s < 1. `s = 1` still needs its own branch, since
                        // adding the rounded difference back need not
                        // reproduce M exactly.
                        out[here] = if exact {
                            best
                        } else {
                            let xc = xd[here];
                            xc + strength * (best - xc)
                        };
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
                Box::new(StepMaxBack {
                    x: x.clone(),
                    sched: schedule.tensor().clone(),
                    t,
                    x_id: grad_id(x),
                    sched_id: grad_id(schedule.tensor()),
                    arg,
                }),
            );
        }
        Ok(out)
    }

    /// A full continuous pooling layer: `spec.iterations` diffusion steps
    /// (the schedule supplies one strength row per step) followed by the
    /// spec's downsample.
    pub fn continuous_pool_forward(
        &mut self,
        x: &Tensor<T>,
        spec: &ContinuousPoolSpec,
        schedule: &PoolStrengthSchedule<T>,
    ) -> Result<Tensor<T>> {
        if schedule.iterations() != spec.iterations {
            return Err(Error::invalid(
                "continuous_pool_forward",
                format!(
                    "spec asks for {} iterations but schedule has {}",
                    spec.iterations,
                    schedule.iterations()
                ),
            ));
        }
        let mut cur = x.clone();
        for t in 0..spec.iterations {
            cur = match spec.variant {
                StepVariant::Sum => self.diffusion_step_sum(&cur, schedule, t)?,
                StepVariant::Max => self.diffusion_step_max(&cur, schedule, t)?,
            };
        }
        self.apply_downsample(&cur, spec.downsample, spec.stride)
    }

    /// The spatial reduction shared by continuous and quantized layers.
    pub(crate) fn apply_downsample(
        &mut self,
        x: &Tensor<T>,
        downsample: Downsample,
        stride: usize,
    ) -> Result<Tensor<T>> {
        match downsample {
            Downsample::MaxPool => {
                let w = crate::pooling::PoolWindowSpec::new(stride, stride)?;
                self.max_pool(x, w)
            }
            Downsample::AvgPool => {
                let w = crate::pooling::PoolWindowSpec::new(stride, stride)?;
                self.avg_pool(x, w)
            }
            Downsample::Subsample => self.strided_subsample(x, stride),
            Downsample::None => {
                if stride != 1 {
                    return Err(Error::invalid(
                        "apply_downsample",
                        format!("downsample none requires stride 1, got {stride}"),
                    ));
                }
                Ok(x.clone())
            }
        }
    }

    /// Response of the layer to a centered unit impulse on an odd
    /// `size x size` grid, with the downsample stripped so the spatial
    /// spread is observable. The impulse is replicated across the schedule's
    /// channels; channel `c` of the result is that channel's response.
    pub fn dirac_response(
        &mut self,
        spec: &ContinuousPoolSpec,
        schedule: &PoolStrengthSchedule<T>,
        size: usize,
    ) -> Result<Tensor<T>> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::invalid(
                "dirac_response",
                format!("probe size must be odd, got {size}"),
            ));
        }
        let channels = schedule.channels();
        let mid = size / 2;
        let impulse = Tensor::from_fn(Shape::new(1, channels, size, size), |_, _, h, w| {
            if h == mid && w == mid {
                T::one()
            } else {
                T::zero()
            }
        });
        self.continuous_pool_forward(&impulse, &spec.full_resolution(), schedule)
    }
}

struct StepSumBack<T: Scalar> {
    x: Tensor<T>,
    sched: Tensor<T>,
    t: usize,
    x_id: Option<TensorId>,
    sched_id: Option<TensorId>,
}

impl<T: Scalar> BackwardOp<T> for StepSumBack<T> {
    fn backward(&self, out_grad: &[T], grads: &mut GradStore<T>) {
        let s = self.x.shape();
        let (hh, ww) = (s.h, s.w);
        let xd = self.x.data();
        let sched_shape = self.sched.shape();
        // Two passes share the neighbor re-scan; per-pixel work mirrors the
        // forward exactly (positive differences only, relu'(0) = 0).
        if let Some(xid) = self.x_id {
            let buf = grads.accum(xid, s.numel());
            for b in 0..s.b {
                for c in 0..s.c {
                    let strength = self.sched.at(0, 0, self.t, c);
                    let base = (b * s.c + c) * hh * ww;
                    for i in 0..hh {
                        for j in 0..ww {
                            let here = base + i * ww + j;
                            let g = out_grad[here];
                            let xc = xd[here];
                            buf[here] = buf[here] + g;
                            let gs = g * strength;
                            for (di, dj) in NEIGHBORS {
                                let ni = i as i64 + di;
                                let nj = j as i64 + dj;
                                if ni >= 0 && nj >= 0 && (ni as usize) < hh && (nj as usize) < ww {
                                    let n = base + ni as usize * ww + nj as usize;
                                    if xd[n] - xc > T::zero() {
                                        buf[n] = buf[n] + gs;
                                        buf[here] = buf[here] - gs;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if let Some(sid) = self.sched_id {
            let buf = grads.accum(sid, sched_shape.numel());
            for b in 0..s.b {
                for c in 0..s.c {
                    let slot = sched_shape.at(0, 0, self.t, c);
                    let base = (b * s.c + c) * hh * ww;
                    let mut total = T::zero();
                    for i in 0..hh {
                        for j in 0..ww {
                            let here = base + i * ww + j;
                            let xc = xd[here];
                            let mut acc = T::zero();
                            for (di, dj) in NEIGHBORS {
                                let ni = i as i64 + di;
                                let nj = j as i64 + dj;
                                if ni >= 0 && nj >= 0 && (ni as usize) < hh && (nj as usize) < ww {
                                    let d = xd[base + ni as usize * ww + nj as usize] - xc;
                                    if d > T::zero() {
                                        acc = acc + d;
                                    }
                                }
                            }
                            total = total + out_grad[here] * acc;
                        }
                    }
                    buf[slot] = buf[slot] + total;
                }
            }
        }
    }
}

struct StepMaxBack<T: Scalar> {
    x: Tensor<T>,
    sched: Tensor<T>,
    t: usize,
    x_id: Option<TensorId>,
    sched_id: Option<TensorId>,
    arg: Vec<u32>,
}

impl<T: Scalar> BackwardOp<T> for StepMaxBack<T> {
    fn backward(&self, out_grad: &[T], grads: &mut GradStore<T>) {
        let s = self.x.shape();
        let plane = s.plane();
        let xd = self.x.data();
        let sched_shape = self.sched.shape();
        let one = T::one();
        if let Some(xid) = self.x_id {
            let buf = grads.accum(xid, s.numel());
            for b in 0..s.b {
                for c in 0..s.c {
                    let strength = self.sched.at(0, 0, self.t, c);
                    let keep = one - strength;
                    let base = (b * s.c + c) * plane;
                    for p in base..base + plane {
                        let g = out_grad[p];
                        let a = self.arg[p] as usize;
                        buf[p] = buf[p] + g * keep;
                        buf[a] = buf[a] + g * strength;
                    }
                }
            }
        }
        if let Some(sid) = self.sched_id {
            let buf = grads.accum(sid, sched_shape.numel());
            for b in 0..s.b {
                for c in 0..s.c {
                    let slot = sched_shape.at(0, 0, self.t, c);
                    let base = (b * s.c + c) * plane;
                    let mut total = T::zero();
                    for p in base..base + plane {
                        // d out / d s = M - x, recovered from the argmax.
                        total = total + out_grad[p] * (xd[self.arg[p] as usize] - xd[p]);
                    }
                    buf[slot] = buf[slot] + total;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(vals: &[f64]) -> Tensor<f64> {
        Tensor::new(Shape::new(1, 1, 1, vals.len()), vals.to_vec()).unwrap()
    }

    fn sched1(iterations: usize, value: f64) -> PoolStrengthSchedule<f64> {
        PoolStrengthSchedule::constant(iterations, 1, value, false)
    }

    #[test]
    fn spec_validates_its_arguments() {
        assert!(ContinuousPoolSpec::new(0, StepVariant::Sum, Downsample::None, 1).is_err());
        assert!(ContinuousPoolSpec::new(1, StepVariant::Sum, Downsample::None, 2).is_err());
        assert!(ContinuousPoolSpec::new(1, StepVariant::Sum, Downsample::MaxPool, 0).is_err());
        assert!(ContinuousPoolSpec::new(3, StepVariant::Max, Downsample::Subsample, 2).is_ok());
    }

    #[test]
    fn sum_step_lifts_edges_of_a_peak_by_strength_times_difference() {
        // Border neighborhoods are clipped: each edge pixel sees the peak
        // once, so it gains exactly 0.1 * (1 - 0).
        let mut g = GradGraph::inference();
        let out = g
            .diffusion_step_sum(&row(&[0.0, 1.0, 0.0]), &sched1(1, 0.1), 0)
            .unwrap();
        assert_eq!(out.data(), &[0.1, 1.0, 0.1]);
    }

    #[test]
    fn max_step_moves_toward_window_maximum() {
        let mut g = GradGraph::inference();
        let out = g
            .diffusion_step_max(&row(&[5.0, 1.0]), &sched1(1, 0.5), 0)
            .unwrap();
        assert_eq!(out.data(), &[5.0, 3.0]);
    }

    #[test]
    fn zero_strength_is_bitwise_identity_for_both_variants() {
        let x = Tensor::from_rows(&[&[0.25, -1.5, 3.0], &[2.0, -0.125, 0.0]]).unwrap();
        let mut g = GradGraph::inference();
        let zero = sched1(1, 0.0);
        assert_eq!(g.diffusion_step_sum(&x, &zero, 0).unwrap().data(), x.data());
        assert_eq!(g.diffusion_step_max(&x, &zero, 0).unwrap().data(), x.data());
    }

    #[test]
    fn unit_strength_max_step_equals_neighborhood_max_exactly() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let x = Tensor::from_fn(Shape::new(1, 2, 6, 5), |_, _, _, _| {
                rng.gen_range(-2.0..2.0)
            });
            let mut g = GradGraph::inference();
            let stepped = g
                .diffusion_step_max(&x, &PoolStrengthSchedule::constant(1, 2, 1.0, false), 0)
                .unwrap();
            let dilated = g.neighborhood_max(&x, 1).unwrap();
            assert_eq!(stepped.data(), dilated.data());
        }
    }

    #[test]
    fn sum_step_gradients_match_hand_derivation() {
        // x = [0, 1], s = 0.25, root = sum(out):
        // out0 = x0 + s*(x1 - x0), out1 = x1 (no positive difference).
        // dx = [1 - s, 1 + s], dsched = (x1 - x0) = 1.
        let x = Tensor::param(Shape::new(1, 1, 1, 2), vec![0.0, 1.0]).unwrap();
        let sched = PoolStrengthSchedule::<f64>::from_rows(&[&[0.25]], true).unwrap();
        let mut g = GradGraph::new();
        let out = g.diffusion_step_sum(&x, &sched, 0).unwrap();
        assert_eq!(out.data(), &[0.25, 1.0]);
        let root = g.sum_all(&out).unwrap();
        let grads = g.backward(&root).unwrap();
        assert_eq!(grads.get(&x).data(), &[0.75, 1.25]);
        assert_eq!(grads.get(sched.tensor()).data(), &[1.0]);
    }

    #[test]
    fn max_step_gradients_match_hand_derivation() {
        // Same setting as the sum case; the single positive difference is
        // also the maximum, so every gradient coincides.
        let x = Tensor::param(Shape::new(1, 1, 1, 2), vec![0.0, 1.0]).unwrap();
        let sched = PoolStrengthSchedule::<f64>::from_rows(&[&[0.25]], true).unwrap();
        let mut g = GradGraph::new();
        let out = g.diffusion_step_max(&x, &sched, 0).unwrap();
        assert_eq!(out.data(), &[0.25, 1.0]);
        let root = g.sum_all(&out).unwrap();
        let grads = g.backward(&root).unwrap();
        assert_eq!(grads.get(&x).data(), &[0.75, 1.25]);
        assert_eq!(grads.get(sched.tensor()).data(), &[1.0]);
    }

    #[test]
    fn forward_applies_schedule_rows_in_order() {
        // Two iterations with distinct strengths on [0, 1]: first step uses
        // row 0 (0.5), second row 1 (0.25) on the result.
        let sched = PoolStrengthSchedule::<f64>::from_rows(&[&[0.5], &[0.25]], false).unwrap();
        let spec = ContinuousPoolSpec::new(2, StepVariant::Max, Downsample::None, 1).unwrap();
        let mut g = GradGraph::inference();
        let out = g
            .continuous_pool_forward(&row(&[0.0, 1.0]), &spec, &sched)
            .unwrap();
        // After step 1: [0.5, 1]; after step 2: [0.5 + 0.25*0.5, 1].
        assert_eq!(out.data(), &[0.625, 1.0]);
    }

    #[test]
    fn forward_rejects_schedule_length_mismatch() {
        let sched = sched1(2, 0.1);
        let spec = ContinuousPoolSpec::new(3, StepVariant::Sum, Downsample::None, 1).unwrap();
        let mut g = GradGraph::<f64>::inference();
        assert!(g
            .continuous_pool_forward(&row(&[0.0, 1.0]), &spec, &sched)
            .is_err());
        assert!(g.diffusion_step_sum(&row(&[0.0]), &sched, 2).is_err());
    }

    #[test]
    fn step_rejects_channel_mismatch() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 3, 2, 2));
        let sched = PoolStrengthSchedule::constant(1, 2, 0.1, false);
        let mut g = GradGraph::inference();
        assert!(g.diffusion_step_sum(&x, &sched, 0).is_err());
    }

    #[test]
    fn drop_in_layer_with_zero_strength_is_plain_max_pool() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, _, _| {
            rng.gen_range(-1.0..1.0)
        });
        let spec = ContinuousPoolSpec::drop_in(1, StepVariant::Max).unwrap();
        let sched = sched1(1, 0.0);
        let mut g = GradGraph::inference();
        let cont = g.continuous_pool_forward(&x, &spec, &sched).unwrap();
        let plain = g
            .max_pool(&x, crate::pooling::PoolWindowSpec::new(2, 2).unwrap())
            .unwrap();
        assert_eq!(cont.data(), plain.data());
    }

    #[test]
    fn dirac_response_of_unit_strength_max_is_a_growing_plateau() {
        // Three unit-strength max steps dilate the impulse to a 7x7 plateau.
        let sched = sched1(3, 1.0);
        let spec = ContinuousPoolSpec::new(3, StepVariant::Max, Downsample::None, 1).unwrap();
        let mut g = GradGraph::inference();
        let out = g.dirac_response(&spec, &sched, 9).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 1, 9, 9));
        for i in 0..9i64 {
            for j in 0..9i64 {
                let inside = (i - 4).abs() <= 3 && (j - 4).abs() <= 3;
                assert_eq!(
                    out.at(0, 0, i as usize, j as usize),
                    f64::from(inside as u8)
                );
            }
        }
    }

    #[test]
    fn dirac_response_at_zero_strength_is_the_impulse() {
        let sched = sched1(4, 0.0);
        let spec = ContinuousPoolSpec::new(4, StepVariant::Sum, Downsample::None, 1).unwrap();
        let mut g = GradGraph::inference();
        let out = g.dirac_response(&spec, &sched, 7).unwrap();
        let total: f64 = out.data().iter().sum();
        assert_eq!(total, 1.0);
        assert_eq!(out.at(0, 0, 3, 3), 1.0);
    }

    #[test]
    fn dirac_response_requires_odd_size() {
        let sched = sched1(1, 0.5);
        let spec = ContinuousPoolSpec::new(1, StepVariant::Sum, Downsample::None, 1).unwrap();
        let mut g = GradGraph::<f64>::inference();
        assert!(g.dirac_response(&spec, &sched, 8).is_err());
        assert!(g.dirac_response(&spec, &sched, 0).is_err());
    }

    #[test]
    fn probe_responses_replicate_across_channels_with_shared_strengths() {
        let sched = PoolStrengthSchedule::<f64>::constant(2, 3, 0.1, false);
        let spec = ContinuousPoolSpec::new(2, StepVariant::Sum, Downsample::None, 1).unwrap();
        let mut g = GradGraph::inference();
        let out = g.dirac_response(&spec, &sched, 7).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 3, 7, 7));
        let plane = 49;
        let d = out.data();
        assert_eq!(&d[0..plane], &d[plane..2 * plane]);
        assert_eq!(&d[0..plane], &d[2 * plane..3 * plane]);
    }
}
