//! LeNet-5 with a pluggable pooling stage.
//!
//! The architecture is the classic conv/pool/conv/pool/dense stack; the two
//! pooling stages can each be plain max or average pooling, a continuous
//! diffusion pooling layer with trainable strengths, or a quantized plan.
//! All variants reduce spatial extent by exactly 2x, so they are drop-in
//! interchangeable for the rest of the network.
//!
//! Initialization draws each layer from its own deterministic RNG stream:
//! swapping one pooling stage for another leaves every other layer's
//! initial weights bit-identical, which is what makes the pooling
//! comparisons in the experiments meaningful.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::continuous::{ContinuousPoolSpec, Downsample, PoolStrengthSchedule};
use crate::error::{Error, Result};
use crate::graph::GradGraph;
use crate::pooling::PoolWindowSpec;
use crate::quant::{QuantizedPoolPlan, RadiusRule};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// What a pooling stage does. Both stages halve spatial extent.
#[derive(Clone, Debug)]
pub enum PoolKind {
    /// Plain 2x2/stride-2 max pooling.
    Max,
    /// Plain 2x2/stride-2 average pooling.
    Avg,
    /// Diffusion iterations with trainable strengths, then the
    /// `ContinuousPoolSpec`'s own downsample, which must halve (stride 2).
    Continuous(ContinuousPoolSpec),
    /// A quantized radius plan, then the recorded downsample.
    Quantized {
        plan: QuantizedPoolPlan,
        downsample: Downsample,
        stride: usize,
    },
}

/// Layer widths. `classes = 1` builds a regression head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LeNetConfig {
    pub input: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub fc1: usize,
    pub fc2: usize,
    pub classes: usize,
    pub kernel: usize,
}

impl LeNetConfig {
    /// The standard widths: 32x32 input, 6/16 conv channels, 120/84 dense.
    pub fn standard(classes: usize) -> Self {
        LeNetConfig {
            input: 32,
            conv1: 6,
            conv2: 16,
            fc1: 120,
            fc2: 84,
            classes,
            kernel: 5,
        }
    }

    /// A few-hundred-weight variant for gradient checks: 16x16 input,
    /// 2/4 conv channels, 8/8 dense.
    pub fn tiny(classes: usize) -> Self {
        LeNetConfig {
            input: 16,
            conv1: 2,
            conv2: 4,
            fc1: 8,
            fc2: 8,
            classes,
            kernel: 5,
        }
    }

    /// Flattened feature count after conv/pool/conv/pool, validating that
    /// every stage divides cleanly.
    pub fn flat_features(&self) -> Result<usize> {
        let bad = |what: &str, v: usize| {
            Error::invalid(
                "lenet_config",
                format!("{what} extent {v} does not divide cleanly"),
            )
        };
        if self.input <= self.kernel || self.kernel == 0 {
            return Err(Error::invalid(
                "lenet_config",
                format!("kernel {} too large for input {}", self.kernel, self.input),
            ));
        }
        if self.classes == 0 || self.conv1 == 0 || self.conv2 == 0 || self.fc1 == 0 || self.fc2 == 0
        {
            return Err(Error::invalid("lenet_config", "zero-width layer"));
        }
        let a = self.input - self.kernel + 1;
        if a % 2 != 0 {
            return Err(bad("first conv output", a));
        }
        let b = a / 2;
        if b <= self.kernel - 1 {
            return Err(bad("first pool output", b));
        }
        let c = b - self.kernel + 1;
        if c % 2 != 0 {
            return Err(bad("second conv output", c));
        }
        Ok(self.conv2 * (c / 2) * (c / 2))
    }
}

/// The model: a fixed-order list of named parameter tensors plus the two
/// pooling stage descriptions.
#[derive(Clone, Debug)]
pub struct LeNet<T: Scalar> {
    config: LeNetConfig,
    pool1: PoolKind,
    pool2: PoolKind,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

/// Fixed RNG stream per layer role, so layer initializations are
/// independent of which other layers exist.
const STREAM_CONV1: u64 = 1;
const STREAM_CONV2: u64 = 2;
const STREAM_FC1: u64 = 3;
const STREAM_FC2: u64 = 4;
const STREAM_HEAD: u64 = 5;

fn uniform_init<T: Scalar>(shape: Shape, fan_in: usize, seed: u64, stream: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    // sqrt(6 / fan_in) keeps post-relu activation variance roughly constant
    // through the stack; smaller bounds starve the regression head of scale.
    let bound = T::from_f64((6.0 / fan_in as f64).sqrt());
    let data = (0..shape.numel())
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::from_vec(shape, data, true)
}

fn validate_pool(which: &str, kind: &PoolKind, channels: usize) -> Result<()> {
    match kind {
        PoolKind::Max | PoolKind::Avg => Ok(()),
        PoolKind::Continuous(spec) => {
            if spec.stride != 2 || spec.downsample == Downsample::None {
                Err(Error::invalid(
                    "lenet",
                    format!("{which} must halve spatial extent (stride 2)"),
                ))
            } else {
                Ok(())
            }
        }
        PoolKind::Quantized {
            plan,
            downsample,
            stride,
        } => {
            if *stride != 2 || *downsample == Downsample::None {
                return Err(Error::invalid(
                    "lenet",
                    format!("{which} must halve spatial extent (stride 2)"),
                ));
            }
            if plan.channels() != channels {
                return Err(Error::invalid(
                    "lenet",
                    format!(
                        "{which} plan covers {} channels, layer has {channels}",
                        plan.channels()
                    ),
                ));
            }
            Ok(())
        }
    }
}

impl<T: Scalar> LeNet<T> {
    /// Builds and initializes the network. Continuous pooling stages get a
    /// trainable strength schedule, constant `initial_strength` per slot.
    pub fn new(
        config: LeNetConfig,
        pool1: PoolKind,
        pool2: PoolKind,
        initial_strength: f64,
        seed: u64,
    ) -> Result<Self> {
        let flat = config.flat_features()?;
        validate_pool("pool1", &pool1, config.conv1)?;
        validate_pool("pool2", &pool2, config.conv2)?;
        let k = config.kernel;
        let mut names: Vec<String> = Vec::new();
        let mut params: Vec<Tensor<T>> = Vec::new();
        let push = |names: &mut Vec<String>, params: &mut Vec<Tensor<T>>, n: &str, t| {
            names.push(n.to_string());
            params.push(t);
        };
        push(
            &mut names,
            &mut params,
            "conv1.weight",
            uniform_init(Shape::new(config.conv1, 1, k, k), k * k, seed, STREAM_CONV1),
        );
        push(
            &mut names,
            &mut params,
            "conv1.bias",
            Tensor::from_vec(
                Shape::new(1, 1, 1, config.conv1),
                vec![T::zero(); config.conv1],
                true,
            ),
        );
        push(
            &mut names,
            &mut params,
            "conv2.weight",
            uniform_init(
                Shape::new(config.conv2, config.conv1, k, k),
                config.conv1 * k * k,
                seed,
                STREAM_CONV2,
            ),
        );
        push(
            &mut names,
            &mut params,
            "conv2.bias",
            Tensor::from_vec(
                Shape::new(1, 1, 1, config.conv2),
                vec![T::zero(); config.conv2],
                true,
            ),
        );
        push(
            &mut names,
            &mut params,
            "fc1.weight",
            uniform_init(Shape::new(1, 1, config.fc1, flat), flat, seed, STREAM_FC1),
        );
        push(
            &mut names,
            &mut params,
            "fc1.bias",
            Tensor::from_vec(
                Shape::new(1, 1, 1, config.fc1),
                vec![T::zero(); config.fc1],
                true,
            ),
        );
        push(
            &mut names,
            &mut params,
            "fc2.weight",
            uniform_init(
                Shape::new(1, 1, config.fc2, config.fc1),
                config.fc1,
                seed,
                STREAM_FC2,
            ),
        );
        push(
            &mut names,
            &mut params,
            "fc2.bias",
            Tensor::from_vec(
                Shape::new(1, 1, 1, config.fc2),
                vec![T::zero(); config.fc2],
                true,
            ),
        );
        push(
            &mut names,
            &mut params,
            "head.weight",
            uniform_init(
                Shape::new(1, 1, config.classes, config.fc2),
                config.fc2,
                seed,
                STREAM_HEAD,
            ),
        );
        push(
            &mut names,
            &mut params,
            "head.bias",
            Tensor::from_vec(
                Shape::new(1, 1, 1, config.classes),
                vec![T::zero(); config.classes],
                true,
            ),
        );
        if let PoolKind::Continuous(spec) = &pool1 {
            push(
                &mut names,
                &mut params,
                "pool1.strengths",
                PoolStrengthSchedule::<T>::constant(
                    spec.iterations,
                    config.conv1,
                    initial_strength,
                    true,
                )
                .tensor()
                .clone(),
            );
        }
        if let PoolKind::Continuous(spec) = &pool2 {
            push(
                &mut names,
                &mut params,
                "pool2.strengths",
                PoolStrengthSchedule::<T>::constant(
                    spec.iterations,
                    config.conv2,
                    initial_strength,
                    true,
                )
                .tensor()
                .clone(),
            );
        }
        Ok(LeNet {
            config,
            pool1,
            pool2,
            names,
            params,
        })
    }

    pub fn config(&self) -> &LeNetConfig {
        &self.config
    }

    pub fn pool1(&self) -> &PoolKind {
        &self.pool1
    }

    pub fn pool2(&self) -> &PoolKind {
        &self.pool2
    }

    /// Parameters in fixed order, parallel to `param_names`.
    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.params[i])
    }

    /// Replaces a parameter (e.g. from a checkpoint); the shape must match
    /// and the stored tensor is re-marked trainable.
    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::invalid("set_param", format!("no parameter {name:?}")))?;
        if value.shape() != self.params[i].shape() {
            return Err(Error::shapes(
                "set_param",
                self.params[i].shape(),
                value.shape(),
            ));
        }
        // Keep the caller's tensor identity when it is already trainable;
        // only constants (e.g. checkpoint reads) get re-marked.
        self.params[i] = if value.requires_grad() {
            value
        } else {
            value.to_param()
        };
        Ok(())
    }

    /// The strength schedule of a continuous pooling stage, if that stage
    /// is continuous. `stage` is 1 or 2.
    pub fn strength_schedule(&self, stage: usize) -> Option<PoolStrengthSchedule<T>> {
        let (kind, name) = match stage {
            1 => (&self.pool1, "pool1.strengths"),
            2 => (&self.pool2, "pool2.strengths"),
            _ => return None,
        };
        match kind {
            PoolKind::Continuous(_) => self
                .param(name)
                .cloned()
                .map(|t| PoolStrengthSchedule::from_tensor(t).expect("stored schedule shape")),
            _ => None,
        }
    }

    fn apply_pool(&self, g: &mut GradGraph<T>, x: &Tensor<T>, stage: usize) -> Result<Tensor<T>> {
        let kind = if stage == 1 { &self.pool1 } else { &self.pool2 };
        match kind {
            PoolKind::Max => g.max_pool(x, PoolWindowSpec::new(2, 2)?),
            PoolKind::Avg => g.avg_pool(x, PoolWindowSpec::new(2, 2)?),
            PoolKind::Continuous(spec) => {
                let sched = self
                    .strength_schedule(stage)
                    .ok_or_else(|| Error::invalid("lenet_forward", "missing strengths"))?;
                g.continuous_pool_forward(x, spec, &sched)
            }
            PoolKind::Quantized {
                plan,
                downsample,
                stride,
            } => plan.apply(g, x, *downsample, *stride),
        }
    }

    /// Runs the network on `(B, 1, input, input)` images, producing
    /// `(B, 1, 1, classes)` head outputs (logits, or the raw regression
    /// value for `classes = 1`).
    pub fn forward(&self, g: &mut GradGraph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.c != 1 || s.h != self.config.input || s.w != self.config.input {
            return Err(Error::invalid(
                "lenet_forward",
                format!(
                    "expected (B, 1, {0}, {0}) input, got {s}",
                    self.config.input
                ),
            ));
        }
        let p = |name: &str| self.param(name).expect("constructor placed all params");
        let v = g.conv2d(x, p("conv1.weight"), p("conv1.bias"))?;
        let v = g.relu(&v)?;
        let v = self.apply_pool(g, &v, 1)?;
        let v = g.conv2d(&v, p("conv2.weight"), p("conv2.bias"))?;
        let v = g.relu(&v)?;
        let v = self.apply_pool(g, &v, 2)?;
        let flat = self.config.flat_features()?;
        let v = g.reshape(&v, Shape::new(s.b, 1, 1, flat))?;
        let v = g.linear(&v, p("fc1.weight"), p("fc1.bias"))?;
        let v = g.relu(&v)?;
        let v = g.linear(&v, p("fc2.weight"), p("fc2.bias"))?;
        let v = g.relu(&v)?;
        g.linear(&v, p("head.weight"), p("head.bias"))
    }

    /// Quantizes every continuous pooling stage from its impulse response,
    /// leaving all other parameters shared with `self`. The strength
    /// schedules are consumed by the measurement and dropped.
    pub fn quantized(&self, probe_size: usize, rule: RadiusRule) -> Result<LeNet<T>> {
        let quantize_stage = |stage: usize, kind: &PoolKind| -> Result<PoolKind> {
            match kind {
                PoolKind::Continuous(spec) => {
                    let sched = self
                        .strength_schedule(stage)
                        .ok_or_else(|| Error::invalid("lenet_quantize", "missing strengths"))?;
                    let plan = QuantizedPoolPlan::for_layer(spec, &sched, probe_size, rule)?;
                    Ok(PoolKind::Quantized {
                        plan,
                        downsample: spec.downsample,
                        stride: spec.stride,
                    })
                }
                other => Ok(other.clone()),
            }
        };
        let pool1 = quantize_stage(1, &self.pool1)?;
        let pool2 = quantize_stage(2, &self.pool2)?;
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (n, t) in self.names.iter().zip(&self.params) {
            if n != "pool1.strengths" && n != "pool2.strengths" {
                names.push(n.clone());
                params.push(t.clone());
            }
        }
        Ok(LeNet {
            config: self.config,
            pool1,
            pool2,
            names,
            params,
        })
    }
}
