//! Experiment configuration and its flat `key=value` file format.
//!
//! The format is deliberately primitive: one `key=value` line per field, in
//! a fixed order, floats printed with Rust's shortest round-trip notation.
//! `to_text` followed by `from_text` is lossless, which is what lets a run
//! directory be re-evaluated long after the run.

use std::fmt;
use std::path::PathBuf;

use cpool::{Error, Result};

/// Which dataset the experiment trains on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// Squared distance between two lit pixels, unbounded targets.
    Distance,
    /// Same, with targets rejected at 49 and above.
    DistanceLimited,
    /// MNIST digits, zero-padded to 32x32.
    Mnist,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Distance => "distance",
            Task::DistanceLimited => "distance_limited",
            Task::Mnist => "mnist",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "distance" => Ok(Task::Distance),
            "distance_limited" => Ok(Task::DistanceLimited),
            "mnist" => Ok(Task::Mnist),
            _ => Err(Error::invalid(
                "config",
                format!("task must be distance, distance_limited, or mnist, got {s:?}"),
            )),
        }
    }

    /// Output width of the classifier head.
    pub fn classes(self) -> usize {
        match self {
            Task::Mnist => 10,
            _ => 1,
        }
    }
}

/// Which pooling fills the two LeNet pooling slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Max,
    Avg,
    ContinuousSum,
    ContinuousMax,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Max => "max",
            Pooling::Avg => "avg",
            Pooling::ContinuousSum => "continuous_sum",
            Pooling::ContinuousMax => "continuous_max",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Pooling::Max),
            "avg" => Ok(Pooling::Avg),
            "continuous_sum" => Ok(Pooling::ContinuousSum),
            "continuous_max" => Ok(Pooling::ContinuousMax),
            _ => Err(Error::invalid(
                "config",
                format!("pooling must be max, avg, continuous_sum, or continuous_max, got {s:?}"),
            )),
        }
    }

    pub fn is_continuous(self) -> bool {
        matches!(self, Pooling::ContinuousSum | Pooling::ContinuousMax)
    }
}

/// Optimizer selector; its hyperparameters live in the config fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerChoice {
    Adam,
    Sgd,
}

impl OptimizerChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerChoice::Adam => "adam",
            OptimizerChoice::Sgd => "sgd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerChoice::Adam),
            "sgd" => Ok(OptimizerChoice::Sgd),
            _ => Err(Error::invalid(
                "config",
                format!("optimizer must be adam or sgd, got {s:?}"),
            )),
        }
    }
}

/// Everything a training run needs, and everything later commands need to
/// reconstruct the model it produced.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub pooling: Pooling,
    /// Diffusion iterations per pooling stage (continuous variants only).
    pub iterations: usize,
    pub init_strength: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub eval_every: usize,
    pub eval_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerChoice,
    pub learning_rate: f64,
    /// SGD momentum; ignored by Adam but kept in the file for round-trips.
    pub momentum: f64,
    /// MNIST training subset size; ignored by the synthetic tasks.
    pub mnist_train_count: usize,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Paper-protocol defaults; the caller picks task, pooling, and out_dir.
    pub fn new(task: Task, pooling: Pooling, out_dir: PathBuf) -> Self {
        ExperimentConfig {
            task,
            pooling,
            iterations: 10,
            init_strength: 0.1,
            batch_size: 32,
            steps: 2000,
            eval_every: 100,
            eval_size: 1000,
            seed: 0,
            optimizer: OptimizerChoice::Adam,
            learning_rate: 1e-4,
            momentum: 0.9,
            mnist_train_count: 10_000,
            out_dir,
        }
    }

    /// Rejects configs no run could execute, naming the offending field.
    /// `steps` may be zero: that run still writes its initial eval row.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| -> Result<()> {
            Err(Error::invalid("config", format!("{field} {why}")))
        };
        if self.iterations == 0 {
            return bad("iterations", "must be at least 1");
        }
        if !(self.init_strength > 0.0) {
            return bad("init_strength", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every", "must be at least 1");
        }
        if self.eval_size == 0 {
            return bad("eval_size", "must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if !(self.momentum >= 0.0) {
            return bad("momentum", "must be non-negative");
        }
        if self.mnist_train_count == 0 {
            return bad("mnist_train_count", "must be at least 1");
        }
        if self.out_dir.as_os_str().is_empty() {
            return bad("out_dir", "must not be empty");
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: fmt::Arguments| s.push_str(&format!("{k}={v}\n"));
        put("task", format_args!("{}", self.task.as_str()));
        put("pooling", format_args!("{}", self.pooling.as_str()));
        put("iterations", format_args!("{}", self.iterations));
        put("init_strength", format_args!("{}", self.init_strength));
        put("batch_size", format_args!("{}", self.batch_size));
        put("steps", format_args!("{}", self.steps));
        put("eval_every", format_args!("{}", self.eval_every));
        put("eval_size", format_args!("{}", self.eval_size));
        put("seed", format_args!("{}", self.seed));
        put("optimizer", format_args!("{}", self.optimizer.as_str()));
        put("learning_rate", format_args!("{}", self.learning_rate));
        put("momentum", format_args!("{}", self.momentum));
        put(
            "mnist_train_count",
            format_args!("{}", self.mnist_train_count),
        );
        put("out_dir", format_args!("{}", self.out_dir.display()));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::new(Task::Distance, Pooling::Max, PathBuf::new());
        let mut seen: Vec<String> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::data(format!("config line {}: expected key=value", lineno + 1))
            })?;
            if seen.iter().any(|k| k == key) {
                return Err(Error::data(format!("config: duplicate key {key:?}")));
            }
            let int = |v: &str| -> Result<usize> {
                v.parse()
                    .map_err(|_| Error::data(format!("config: {key} is not an integer: {v:?}")))
            };
            let float = |v: &str| -> Result<f64> {
                v.parse()
                    .map_err(|_| Error::data(format!("config: {key} is not a number: {v:?}")))
            };
            match key {
                "task" => cfg.task = Task::parse(value)?,
                "pooling" => cfg.pooling = Pooling::parse(value)?,
                "iterations" => cfg.iterations = int(value)?,
                "init_strength" => cfg.init_strength = float(value)?,
                "batch_size" => cfg.batch_size = int(value)?,
                "steps" => cfg.steps = int(value)?,
                "eval_every" => cfg.eval_every = int(value)?,
                "eval_size" => cfg.eval_size = int(value)?,
                "seed" => {
                    cfg.seed = value.parse().map_err(|_| {
                        Error::data(format!("config: seed is not an integer: {value:?}"))
                    })?
                }
                "optimizer" => cfg.optimizer = OptimizerChoice::parse(value)?,
                "learning_rate" => cfg.learning_rate = float(value)?,
                "momentum" => cfg.momentum = float(value)?,
                "mnist_train_count" => cfg.mnist_train_count = int(value)?,
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                _ => return Err(Error::data(format!("config: unknown key {key:?}"))),
            }
            seen.push(key.to_string());
        }
        for required in ["task", "pooling", "out_dir"] {
            if !seen.iter().any(|k| k == required) {
                return Err(Error::data(format!("config: missing key {required:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
