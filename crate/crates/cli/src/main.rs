//! `cpool`: train, evaluate, probe, and quantize continuous-pooling
//! networks. Exit codes: 0 success, 1 usage, 2 data, 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use cpool::continuous::StepVariant;
use cpool::quant::RadiusRule;
use cpool::Error;
use cpool_cli::commands;
use cpool_cli::config::{ExperimentConfig, OptimizerChoice, Pooling, Task};

#[derive(Parser)]
#[command(name = "cpool", about = "Continuous pooling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes config.txt, metrics.csv, model.ckpt to --out
    Train {
        /// distance | distance_limited | mnist
        #[arg(long)]
        task: String,
        /// max | avg | continuous_sum | continuous_max
        #[arg(long)]
        pooling: String,
        /// Run directory to create
        #[arg(long)]
        out: PathBuf,
        /// Diffusion iterations per pooling stage
        #[arg(long, default_value_t = 10)]
        iterations: usize,
        /// Initial per-iteration, per-channel pooling strength
        #[arg(long, default_value_t = 0.1)]
        init_strength: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        /// Record metrics every this many steps
        #[arg(long, default_value_t = 100)]
        eval_every: usize,
        /// Samples in the held-out eval set
        #[arg(long, default_value_t = 1000)]
        eval_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// adam | sgd
        #[arg(long, default_value = "adam")]
        optimizer: String,
        #[arg(long, default_value_t = 1e-4)]
        learning_rate: f64,
        /// SGD momentum (ignored by adam)
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        /// MNIST training subset size
        #[arg(long, default_value_t = 10000)]
        mnist_train_count: usize,
    },
    /// Evaluate a run directory's model; prints the metric with 4 decimals
    Eval {
        run_dir: PathBuf,
        /// Evaluate model.quant.ckpt with its plan files instead
        #[arg(long)]
        quantized: bool,
        /// Override the config's eval set size
        #[arg(long)]
        eval_size: Option<usize>,
        /// Eval worker threads; the metric value is unchanged, only the
        /// internal order of per-sample work varies
        #[arg(long, default_value_t = 1)]
        parallel_eval: usize,
    },
    /// Probe one pooling layer with a centered impulse; writes a PGM and
    /// prints the measured 50% Chebyshev radius
    Dirac {
        /// Pooling strength applied at every iteration
        #[arg(long)]
        strength: f64,
        #[arg(long, default_value_t = 10000)]
        iterations: usize,
        /// Odd probe grid size
        #[arg(long, default_value_t = 129)]
        size: usize,
        /// sum | max
        #[arg(long, default_value = "sum")]
        variant: String,
        /// Output PGM path
        #[arg(long)]
        out: PathBuf,
    },
    /// Quantize a trained continuous run into plan files + checkpoint
    Quantize {
        run_dir: PathBuf,
        /// Odd probe size (default: wide enough for the run's iterations)
        #[arg(long)]
        probe_size: Option<usize>,
        /// chebyshev | area
        #[arg(long, default_value = "chebyshev")]
        rule: String,
        /// Fine-tune the quantized model for this many steps
        #[arg(long, default_value_t = 0)]
        fine_tune_steps: usize,
    },
    /// Dump synthetic samples as checkpoint-layout tensor records
    GenData {
        /// distance | distance_limited
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient verification; exit 3 on failure
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        op_trials: usize,
        #[arg(long, default_value_t = 100)]
        lenet_trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_variant(s: &str) -> cpool::Result<StepVariant> {
    match s {
        "sum" => Ok(StepVariant::Sum),
        "max" => Ok(StepVariant::Max),
        _ => Err(Error::invalid(
            "dirac",
            format!("variant must be sum or max, got {s:?}"),
        )),
    }
}

fn parse_rule(s: &str) -> cpool::Result<RadiusRule> {
    match s {
        "chebyshev" => Ok(RadiusRule::Chebyshev),
        "area" => Ok(RadiusRule::EquivalentArea),
        _ => Err(Error::invalid(
            "quantize",
            format!("rule must be chebyshev or area, got {s:?}"),
        )),
    }
}

fn run(command: Command) -> cpool::Result<()> {
    match command {
        Command::Train {
            task,
            pooling,
            out,
            iterations,
            init_strength,
            batch_size,
            steps,
            eval_every,
            eval_size,
            seed,
            optimizer,
            learning_rate,
            momentum,
            mnist_train_count,
        } => {
            let cfg = ExperimentConfig {
                task: Task::parse(&task)?,
                pooling: Pooling::parse(&pooling)?,
                iterations,
                init_strength,
                batch_size,
                steps,
                eval_every,
                eval_size,
                seed,
                optimizer: OptimizerChoice::parse(&optimizer)?,
                learning_rate,
                momentum,
                mnist_train_count,
                out_dir: out,
            };
            commands::cmd_train(&cfg).map(|_| ())
        }
        Command::Eval {
            run_dir,
            quantized,
            eval_size,
            parallel_eval,
        } => commands::cmd_eval(&run_dir, quantized, eval_size, parallel_eval).map(|_| ()),
        Command::Dirac {
            strength,
            iterations,
            size,
            variant,
            out,
        } => commands::cmd_dirac(strength, iterations, size, parse_variant(&variant)?, &out)
            .map(|_| ()),
        Command::Quantize {
            run_dir,
            probe_size,
            rule,
            fine_tune_steps,
        } => commands::cmd_quantize(&run_dir, probe_size, parse_rule(&rule)?, fine_tune_steps),
        Command::GenData {
            task,
            count,
            seed,
            out,
        } => commands::cmd_gen_data(Task::parse(&task)?, count, seed, &out),
        Command::Gradcheck {
            op_trials,
            lenet_trials,
            seed,
        } => commands::cmd_gradcheck(op_trials, lenet_trials, seed),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArg { .. } | Error::ShapeMismatch { .. } => 1,
        Error::Data(_) | Error::Io(_) => 2,
        Error::Numeric(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
