//! Receptive-field quantization: collapsing trained continuous pooling back
//! into discrete grouped max pooling.
//!
//! The pipeline measures each channel's effective pooling radius from its
//! unit-impulse response (threshold at half the peak, then a radius rule),
//! rounds to an integer radius in `[1, 10]`, and rebuilds the layer as
//! channel permutation -> per-group neighborhood max -> original
//! downsample -> inverse permutation. Sorting channels by radius makes each
//! group a single contiguous standard pooling op.

use std::fmt::Write as _;

use crate::continuous::{ContinuousPoolSpec, Downsample, PoolStrengthSchedule};
use crate::error::{Error, Result};
use crate::graph::{BackwardOp, GradGraph, GradStore};
use crate::ops::ArgmaxBack;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor, TensorId};

/// Smallest radius a channel can quantize to.
pub const MIN_RADIUS: usize = 1;
/// Largest radius a channel can quantize to.
pub const MAX_RADIUS: usize = 10;

/// How a thresholded impulse response maps to a scalar radius.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RadiusRule {
    /// Chessboard distance of the farthest above-threshold cell. The
    /// default: it matches the square windows the discrete layer uses.
    Chebyshev,
    /// Radius of the disk with the same area as the above-threshold region.
    EquivalentArea,
}

/// Rounds a measured radius to the discrete grid: half away from zero,
/// clamped to `[MIN_RADIUS, MAX_RADIUS]`.
pub fn quantize_radius(radius: f64) -> usize {
    let r = radius.round();
    if r < MIN_RADIUS as f64 {
        MIN_RADIUS
    } else if r > MAX_RADIUS as f64 {
        MAX_RADIUS
    } else {
        r as usize
    }
}

/// Measures one channel's pooling radius from an impulse response produced
/// by `dirac_response`. Cells at or above half the channel's peak count as
/// covered (inclusive threshold). Fails if the peak is not positive, or if
/// the covered region touches the probe border — the probe was too small
/// and the measurement would be clipped.
pub fn measure_radius<T: Scalar>(
    response: &Tensor<T>,
    channel: usize,
    rule: RadiusRule,
) -> Result<f64> {
    let s = response.shape();
    if s.b != 1 || s.h != s.w || s.h % 2 == 0 {
        return Err(Error::invalid(
            "measure_radius",
            format!("expected a (1, C, S, S) response with odd S, got {s}"),
        ));
    }
    if channel >= s.c {
        return Err(Error::invalid(
            "measure_radius",
            format!("channel {channel} out of range for {s}"),
        ));
    }
    let size = s.h;
    let mid = (size / 2) as i64;
    let plane = &response.data()[channel * size * size..(channel + 1) * size * size];
    let peak = plane.iter().cloned().fold(T::neg_infinity(), T::max);
    if !(peak > T::zero()) {
        return Err(Error::numeric(format!(
            "impulse response of channel {channel} has no positive peak"
        )));
    }
    let threshold = peak / T::from_f64(2.0);
    let mut covered = 0usize;
    let mut chebyshev = 0i64;
    for i in 0..size {
        for j in 0..size {
            if plane[i * size + j] >= threshold {
                if i == 0 || j == 0 || i == size - 1 || j == size - 1 {
                    return Err(Error::invalid(
                        "measure_radius",
                        format!(
                            "covered region of channel {channel} reaches the probe border; \
                             use a larger probe"
                        ),
                    ));
                }
                covered += 1;
                let d = (i as i64 - mid).abs().max((j as i64 - mid).abs());
                chebyshev = chebyshev.max(d);
            }
        }
    }
    Ok(match rule {
        RadiusRule::Chebyshev => chebyshev as f64,
        RadiusRule::EquivalentArea => (covered as f64 / std::f64::consts::PI).sqrt(),
    })
}

/// A quantized pooling layer: one integer radius per original channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedPoolPlan {
    radii: Vec<usize>,
}

impl QuantizedPoolPlan {
    pub fn from_radii(radii: Vec<usize>) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::invalid("quantized_pool_plan", "no channels"));
        }
        if let Some(&r) = radii
            .iter()
            .find(|&&r| !(MIN_RADIUS..=MAX_RADIUS).contains(&r))
        {
            return Err(Error::invalid(
                "quantized_pool_plan",
                format!("radius {r} outside [{MIN_RADIUS}, {MAX_RADIUS}]"),
            ));
        }
        Ok(QuantizedPoolPlan { radii })
    }

    /// Measures and quantizes every channel of an impulse response.
    pub fn from_response<T: Scalar>(response: &Tensor<T>, rule: RadiusRule) -> Result<Self> {
        let radii = (0..response.shape().c)
            .map(|c| Ok(quantize_radius(measure_radius(response, c, rule)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_radii(radii)
    }

    /// Probes a continuous layer and quantizes it in one go.
    pub fn for_layer<T: Scalar>(
        spec: &ContinuousPoolSpec,
        schedule: &PoolStrengthSchedule<T>,
        probe_size: usize,
        rule: RadiusRule,
    ) -> Result<Self> {
        let mut g = GradGraph::inference();
        let response = g.dirac_response(spec, schedule, probe_size)?;
        Self::from_response(&response, rule)
    }

    pub fn channels(&self) -> usize {
        self.radii.len()
    }

    pub fn radii(&self) -> &[usize] {
        &self.radii
    }

    pub fn radius(&self, channel: usize) -> usize {
        self.radii[channel]
    }

    /// Channel order for deployment: stable sort by radius, so equal-radius
    /// channels keep their relative order and form contiguous groups.
    pub fn order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.radii.len()).collect();
        order.sort_by_key(|&c| self.radii[c]);
        order
    }

    /// `(radius, channel count)` runs of the sorted channel order.
    pub fn groups(&self) -> Vec<(usize, usize)> {
        let order = self.order();
        let mut groups: Vec<(usize, usize)> = Vec::new();
        for &c in &order {
            match groups.last_mut() {
                Some((r, n)) if *r == self.radii[c] => *n += 1,
                _ => groups.push((self.radii[c], 1)),
            }
        }
        groups
    }

    /// Serializes the plan. One header line, then one `channel radius` line
    /// per original channel, in channel order.
    pub fn to_text(&self) -> String {
        let mut out = format!("CPOOL-PLAN v1 {}\n", self.radii.len());
        for (c, r) in self.radii.iter().enumerate() {
            writeln!(out, "{c} {r}").expect("string write");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::data("empty pooling plan"))?;
        let channels: usize = match header.split_whitespace().collect::<Vec<_>>()[..] {
            ["CPOOL-PLAN", "v1", n] => n
                .parse()
                .map_err(|_| Error::data(format!("bad plan channel count {n:?}")))?,
            _ => return Err(Error::data(format!("bad plan header {header:?}"))),
        };
        let mut radii = vec![0usize; channels];
        let mut seen = 0usize;
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let (c, r) = match (it.next(), it.next(), it.next()) {
                (Some(c), Some(r), None) => (c, r),
                _ => return Err(Error::data(format!("bad plan line {line:?}"))),
            };
            let c: usize = c
                .parse()
                .map_err(|_| Error::data(format!("bad plan channel {c:?}")))?;
            let r: usize = r
                .parse()
                .map_err(|_| Error::data(format!("bad plan radius {r:?}")))?;
            if c >= channels {
                return Err(Error::data(format!(
                    "plan channel {c} out of range for {channels}"
                )));
            }
            if radii[c] != 0 {
                return Err(Error::data(format!("duplicate plan channel {c}")));
            }
            radii[c] = r;
            seen += 1;
        }
        if seen != channels {
            return Err(Error::data(format!(
                "plan lists {seen} of {channels} channels"
            )));
        }
        Self::from_radii(radii).map_err(|e| Error::data(format!("invalid plan: {e}")))
    }

    /// Runs the quantized layer: permute channels into radius order, apply
    /// each group's neighborhood max, downsample, and permute back. The
    /// result is an ordinary differentiable graph node, so a quantized
    /// network can be fine-tuned.
    pub fn apply<T: Scalar>(
        &self,
        g: &mut GradGraph<T>,
        x: &Tensor<T>,
        downsample: Downsample,
        stride: usize,
    ) -> Result<Tensor<T>> {
        if x.shape().c != self.radii.len() {
            return Err(Error::invalid(
                "quantized_pool_apply",
                format!(
                    "plan covers {} channels but input {} has {}",
                    self.radii.len(),
                    x.shape(),
                    x.shape().c
                ),
            ));
        }
        let order = self.order();
        let sorted = g.channel_permute(x, &order)?;
        let pooled = g.grouped_neighborhood_max(&sorted, &self.groups())?;
        let reduced = g.apply_downsample(&pooled, downsample, stride)?;
        let mut inverse = vec![0usize; order.len()];
        for (k, &c) in order.iter().enumerate() {
            inverse[c] = k;
        }
        g.channel_permute(&reduced, &inverse)
    }
}

impl<T: Scalar> GradGraph<T> {
    /// Reorders channels: `out[b, k] = x[b, perm[k]]`. `perm` must be a
    /// bijection on the channel indices.
    pub fn channel_permute(&mut self, x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
        let s = x.shape();
        if perm.len() != s.c {
            return Err(Error::invalid(
                "channel_permute",
                format!("permutation of {} entries on {} channels", perm.len(), s.c),
            ));
        }
        let mut seen = vec![false; s.c];
        for &c in perm {
            if c >= s.c || seen[c] {
                return Err(Error::invalid(
                    "channel_permute",
                    "not a bijection on channel indices",
                ));
            }
            seen[c] = true;
        }
        let plane = s.plane();
        let xd = x.data();
        let mut out = Vec::with_capacity(s.numel());
        for b in 0..s.b {
            for &c in perm {
                let src = (b * s.c + c) * plane;
                out.extend_from_slice(&xd[src..src + plane]);
            }
        }
        let rg = self.wants_grad(x.requires_grad());
        let out = Tensor::from_vec(s, out, rg);
        if rg {
            self.push(
                &out,
                Box::new(PermuteBack {
                    x: x.id(),
                    shape: s,
                    perm: perm.to_vec(),
                }),
            );
        }
        Ok(out)
    }

    /// Neighborhood max where consecutive channel groups use different
    /// radii: `groups` lists `(radius, channel count)` runs covering all
    /// channels in order. Clipped windows, first-in-row-major ties.
    pub fn grouped_neighborhood_max(
        &mut self,
        x: &Tensor<T>,
        groups: &[(usize, usize)],
    ) -> Result<Tensor<T>> {
        let s = x.shape();
        let total: usize = groups.iter().map(|&(_, n)| n).sum();
        if total != s.c {
            return Err(Error::invalid(
                "grouped_neighborhood_max",
                format!("groups cover {total} channels but input {s} has {}", s.c),
            ));
        }
        if groups.iter().any(|&(r, n)| r == 0 || n == 0) {
            return Err(Error::invalid(
                "grouped_neighborhood_max",
                "each group needs a positive radius and channel count",
            ));
        }
        if s.numel() > u32::MAX as usize {
            return Err(Error::invalid(
                "grouped_neighborhood_max",
                "tensor too large",
            ));
        }
        // Per-channel radius, expanded from the group runs.
        let mut radius_of = Vec::with_capacity(s.c);
        for &(r, n) in groups {
            radius_of.extend(std::iter::repeat(r).take(n));
        }
        let (hh, ww) = (s.h, s.w);
        let xd = x.data();
        let rg = self.wants_grad(x.requires_grad());
        let mut out = vec![T::zero(); s.numel()];
        let mut arg: Vec<u32> = if rg {
            Vec::with_capacity(s.numel())
        } else {
            Vec::new()
        };
        for b in 0..s.b {
            for c in 0..s.c {
                let r = radius_of[c];
                let base = (b * s.c + c) * hh * ww;
                for i in 0..hh {
                    let i0 = i.saturating_sub(r);
                    let i1 = (i + r).min(hh - 1);
                    for j in 0..ww {
                        let j0 = j.saturating_sub(r);
                        let j1 = (j + r).min(ww - 1);
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

struct PermuteBack {
    x: TensorId,
    shape: Shape,
    perm: Vec<usize>,
}

impl<T: Scalar> BackwardOp<T> for PermuteBack {
    fn backward(&self, out_grad: &[T], grads: &mut GradStore<T>) {
        let s = self.shape;
        let plane = s.plane();
        let buf = grads.accum(self.x, s.numel());
        for b in 0..s.b {
            for (k, &c) in self.perm.iter().enumerate() {
                let src = (b * s.c + k) * plane;
                let dst = (b * s.c + c) * plane;
                for p in 0..plane {
                    buf[dst + p] = buf[dst + p] + out_grad[src + p];
                }
            }
        }
    }
}
