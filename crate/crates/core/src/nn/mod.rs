//! The network stack used by the experiments: fused conv/dense layers, a
//! LeNet-5 style model with swappable pooling, losses, optimizers, and the
//! training loop.

mod layers;
mod lenet;
mod loss;
mod optim;
mod train;

pub use lenet::{LeNet, LeNetConfig, PoolKind};
pub use loss::{accuracy, argmax_rows, mse_loss, softmax_cross_entropy};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{
    evaluate, evaluate_parallel, records_to_csv, train, EvalMetric, TrainOptions, TrainRecord,
};
