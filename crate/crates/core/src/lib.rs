//! Differentiable continuous-time pooling.
//!
//! Max pooling selects a neighborhood maximum with a fixed, hand-picked
//! window. This crate replaces that hard selection with a few explicit Euler
//! steps of a nonlinear diffusion process: every pixel drifts toward the
//! largest value in its 3x3 neighborhood, and the per-step, per-channel
//! pooling strengths are ordinary learnable parameters. Iterating the step
//! widens the effective receptive field, so "how far does this layer pool"
//! becomes something gradient descent can adjust instead of an architectural
//! constant.
//!
//! The crate is self-contained: a fixed-rank tensor type with reverse-mode
//! differentiation ([`tensor`], [`graph`], [`ops`]), classic pooling
//! baselines ([`pooling`]), the diffusion steps themselves ([`continuous`]),
//! quantization of trained strengths back to discrete grouped max pooling
//! ([`quant`]), a small convolutional network stack with its optimizers and
//! training loop ([`nn`]), dataset generation and IDX ingestion ([`data`]),
//! and finite-difference verification of every backward rule ([`gradcheck`]).
//!
//! Precision is a compile-time choice through the [`Scalar`] parameter:
//! gradient checks and probe measurements instantiate `f64`, training
//! instantiates `f32`.

pub mod continuous;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod nn;
pub mod ops;
pub mod pooling;
pub mod quant;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{GradGraph, Gradients};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor, TensorId};
