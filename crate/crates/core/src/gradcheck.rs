//! Finite-difference verification of every backward rule.
//!
//! A scenario is a closure from parameter tensors to a scalar loss. The
//! checker compares each analytic gradient coordinate against a central
//! difference, with automatic step refinement (h, h/10, h/100): ReLU and
//! argmax selections are almost-everywhere differentiable, and a random
//! draw occasionally lands within h of a kink where the plain difference
//! quotient straddles two branches. Shrinking h resolves those unless the
//! kink sits closer than the finest step — there a central quotient mixes
//! the two branch slopes at every h, so the checker falls back to the
//! one-sided quotients: the analytic gradient of a piecewise-smooth op is
//! a one-sided derivative and must match the quotient on its own side. A
//! genuine backward bug stays wrong at every step size on both sides.
//!
//! The standard suites cover both diffusion step variants (inputs and
//! strengths), full pooling layers with their downsample, and a tiny
//! end-to-end LeNet, all in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::continuous::{ContinuousPoolSpec, Downsample, PoolStrengthSchedule, StepVariant};
use crate::error::{Error, Result};
use crate::graph::GradGraph;
use crate::nn::{mse_loss, LeNet, LeNetConfig, PoolKind};
use crate::tensor::{Shape, Tensor};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;
/// Tolerance for primitive-op scenarios.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for the end-to-end network scenarios.
pub const LENET_TOLERANCE: f64 = 1e-3;

/// Scalar-loss builder over a parameter list. Must be deterministic and
/// must read parameters only from the slice it is given.
pub type LossFn<'a> = dyn Fn(&mut GradGraph<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>> + 'a;

/// Outcome of one named scenario family.
#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < self.tolerance
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Checks every coordinate of every parameter; returns the worst relative
/// error after refinement.
pub fn check_scenario(run: &LossFn, params: &[Tensor<f64>], h0: f64, tol: f64) -> Result<f64> {
    let mut g = GradGraph::new();
    let loss = run(&mut g, params)?;
    if !loss.shape().is_scalar() {
        return Err(Error::invalid("gradcheck", "scenario loss must be scalar"));
    }
    let grads = g.backward(&loss)?;
    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut g = GradGraph::inference();
        Ok(run(&mut g, ps)?.data()[0])
    };
    let f0 = eval(params)?;
    let mut worst = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.get(p);
        for j in 0..p.numel() {
            let a = analytic.data()[j];
            let mut best = f64::INFINITY;
            for h in [h0, h0 / 10.0, h0 / 100.0] {
                let (fp, fm) = probe_pair(&eval, params, pi, j, h)?;
                best = best.min(rel_err(a, (fp - fm) / (2.0 * h)));
                if best < tol {
                    break;
                }
            }
            if best >= tol {
                // The central quotient straddles a branch boundary at every h
                // once the boundary sits closer than the finest step; the
                // clean side still measures the one-sided derivative the
                // backward reports.
                for h in [h0, h0 / 10.0, h0 / 100.0] {
                    let (fp, fm) = probe_pair(&eval, params, pi, j, h)?;
                    best = best.min(rel_err(a, (fp - f0) / h));
                    best = best.min(rel_err(a, (f0 - fm) / h));
                    if best < tol {
                        break;
                    }
                }
            }
            worst = worst.max(best);
        }
    }
    Ok(worst)
}

fn probe_pair(
    eval: &dyn Fn(&[Tensor<f64>]) -> Result<f64>,
    params: &[Tensor<f64>],
    pi: usize,
    j: usize,
    h: f64,
) -> Result<(f64, f64)> {
    let probe = |delta: f64| -> Result<f64> {
        let mut ps = params.to_vec();
        let mut data = ps[pi].data().to_vec();
        data[j] += delta;
        ps[pi] = Tensor::new(ps[pi].shape(), data)?;
        eval(&ps)
    };
    Ok((probe(h)?, probe(-h)?))
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data, true)
}

/// Weighted-sum loss: distinct per-pixel weights distinguish gradient
/// routing mistakes that a plain sum would cancel out.
fn weighted_sum(
    g: &mut GradGraph<f64>,
    y: &Tensor<f64>,
    weights: &Tensor<f64>,
) -> Result<Tensor<f64>> {
    let wy = g.mul(y, weights)?;
    g.sum_all(&wy)
}

fn step_suite(variant: StepVariant, trials: usize, seed: u64) -> Result<SuiteResult> {
    let (name, s_lo, s_hi) = match variant {
        StepVariant::Sum => ("diffusion_step_sum", 0.01, 0.12),
        StepVariant::Max => ("diffusion_step_max", 0.1, 0.9),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = random_tensor(&mut rng, Shape::new(1, 2, 5, 5), -1.0, 1.0);
        let sched = random_tensor(&mut rng, Shape::new(1, 1, 1, 2), s_lo, s_hi);
        let weights = Tensor::from_vec(
            x.shape(),
            (0..x.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            false,
        );
        let run = move |g: &mut GradGraph<f64>, ps: &[Tensor<f64>]| {
            let sched = PoolStrengthSchedule::from_tensor(ps[1].clone())?;
            let y = match variant {
                StepVariant::Sum => g.diffusion_step_sum(&ps[0], &sched, 0)?,
                StepVariant::Max => g.diffusion_step_max(&ps[0], &sched, 0)?,
            };
            weighted_sum(g, &y, &weights)
        };
        worst = worst.max(check_scenario(
            &run,
            &[x, sched],
            DEFAULT_STEP,
            OP_TOLERANCE,
        )?);
    }
    Ok(SuiteResult {
        name,
        trials,
        max_rel_err: worst,
        tolerance: OP_TOLERANCE,
    })
}

fn pool_layer_suite(variant: StepVariant, trials: usize, seed: u64) -> Result<SuiteResult> {
    let (name, s_lo, s_hi) = match variant {
        StepVariant::Sum => ("continuous_pool_sum", 0.01, 0.12),
        StepVariant::Max => ("continuous_pool_max", 0.1, 0.9),
    };
    let spec = ContinuousPoolSpec::new(2, variant, Downsample::MaxPool, 2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = random_tensor(&mut rng, Shape::new(2, 2, 6, 6), -1.0, 1.0);
        let sched = random_tensor(&mut rng, Shape::new(1, 1, 2, 2), s_lo, s_hi);
        let weights = Tensor::from_vec(
            Shape::new(2, 2, 3, 3),
            (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            false,
        );
        let run = move |g: &mut GradGraph<f64>, ps: &[Tensor<f64>]| {
            let sched = PoolStrengthSchedule::from_tensor(ps[1].clone())?;
            let y = g.continuous_pool_forward(&ps[0], &spec, &sched)?;
            weighted_sum(g, &y, &weights)
        };
        worst = worst.max(check_scenario(
            &run,
            &[x, sched],
            DEFAULT_STEP,
            OP_TOLERANCE,
        )?);
    }
    Ok(SuiteResult {
        name,
        trials,
        max_rel_err: worst,
        tolerance: OP_TOLERANCE,
    })
}

fn lenet_suite(variant: StepVariant, trials: usize, seed: u64) -> Result<SuiteResult> {
    let name = match variant {
        StepVariant::Sum => "lenet_continuous_sum",
        StepVariant::Max => "lenet_continuous_max",
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let spec = ContinuousPoolSpec::drop_in(3, variant)?;
        let mut model: LeNet<f64> = LeNet::new(
            LeNetConfig::tiny(1),
            PoolKind::Continuous(spec),
            PoolKind::Continuous(spec),
            0.1,
            seed ^ trial as u64,
        )?;
        // Randomize the strengths so schedule gradients are checked away
        // from the constant-initialization point.
        let (lo, hi) = match variant {
            StepVariant::Sum => (0.01, 0.12),
            StepVariant::Max => (0.1, 0.9),
        };
        model.set_param(
            "pool1.strengths",
            random_tensor(&mut rng, Shape::new(1, 1, 3, 2), lo, hi),
        )?;
        model.set_param(
            "pool2.strengths",
            random_tensor(&mut rng, Shape::new(1, 1, 3, 4), lo, hi),
        )?;
        let x = Tensor::from_vec(
            Shape::new(2, 1, 16, 16),
            (0..512).map(|_| rng.gen_range(0.0..1.0)).collect(),
            false,
        );
        let target = Tensor::from_vec(
            Shape::new(2, 1, 1, 1),
            vec![rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)],
            false,
        );
        let params = model.params().to_vec();
        let names: Vec<String> = model.param_names().to_vec();
        let base = model.clone();
        let run = move |g: &mut GradGraph<f64>, ps: &[Tensor<f64>]| {
            let mut m = base.clone();
            for (n, p) in names.iter().zip(ps) {
                m.set_param(n, p.clone())?;
            }
            let out = m.forward(g, &x)?;
            mse_loss(g, &out, &target)
        };
        worst = worst.max(check_scenario(
            &run,
            &params,
            DEFAULT_STEP,
            LENET_TOLERANCE,
        )?);
    }
    Ok(SuiteResult {
        name,
        trials,
        max_rel_err: worst,
        tolerance: LENET_TOLERANCE,
    })
}

/// Runs the standard suites: both step variants, both full pooling layers,
/// and the tiny LeNet with both variants.
pub fn run_default_suites(
    op_trials: usize,
    lenet_trials: usize,
    seed: u64,
) -> Result<Vec<SuiteResult>> {
    Ok(vec![
        step_suite(StepVariant::Sum, op_trials, seed)?,
        step_suite(StepVariant::Max, op_trials, seed + 1)?,
        pool_layer_suite(StepVariant::Sum, op_trials, seed + 2)?,
        pool_layer_suite(StepVariant::Max, op_trials, seed + 3)?,
        lenet_suite(StepVariant::Sum, lenet_trials, seed + 4)?,
        lenet_suite(StepVariant::Max, lenet_trials, seed + 5)?,
    ])
}
