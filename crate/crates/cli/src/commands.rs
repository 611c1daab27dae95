//! Subcommand implementations. Each operates on a run directory holding
//! `config.txt`, `model.ckpt`, `metrics.csv`, and after quantization
//! `pool1.plan`, `pool2.plan`, `model.quant.ckpt`.
//!
//! Training and evaluation run in f32; the receptive-field probe and the
//! gradient checker run in f64, where finite differences are meaningful.

use std::fs;
use std::path::{Path, PathBuf};

use cpool::continuous::{ContinuousPoolSpec, Downsample, PoolStrengthSchedule, StepVariant};
use cpool::data::{
    generate_distance_dataset, load_mnist, mnist_paths, Dataset, DistanceStream, ShuffledStream,
    DISTANCE_IMAGE_SIZE, DISTANCE_LIMIT_SQ,
};
use cpool::gradcheck::run_default_suites;
use cpool::io::{read_checkpoint, write_checkpoint, write_pgm};
use cpool::nn::{
    evaluate, evaluate_parallel, records_to_csv, train, LeNet, LeNetConfig, Optimizer, PoolKind,
    TrainOptions,
};
use cpool::quant::{measure_radius, QuantizedPoolPlan, RadiusRule};
use cpool::{Error, GradGraph, Result, Scalar, Shape, Tensor};

use crate::config::{ExperimentConfig, OptimizerChoice, Pooling, Task};

/// Files inside a run directory.
pub fn config_path(dir: &Path) -> PathBuf {
    dir.join("config.txt")
}
pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("model.ckpt")
}
pub fn metrics_path(dir: &Path) -> PathBuf {
    dir.join("metrics.csv")
}
pub fn quant_checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("model.quant.ckpt")
}
pub fn plan_path(dir: &Path, stage: usize) -> PathBuf {
    dir.join(format!("pool{stage}.plan"))
}
pub fn finetune_metrics_path(dir: &Path) -> PathBuf {
    dir.join("finetune.csv")
}

/// Seed offsets keeping the eval set and the fine-tune stream independent
/// of the training stream while staying a pure function of the config seed.
const EVAL_SEED_OFFSET: u64 = 1_000_003;
const FINETUNE_SEED_OFFSET: u64 = 2_000_003;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

fn mnist_dir() -> Result<PathBuf> {
    match std::env::var("CPOOL_DATA_DIR") {
        Ok(d) if !d.is_empty() => Ok(PathBuf::from(d)),
        _ => Err(Error::data(
            "CPOOL_DATA_DIR is not set; point it at the directory holding the MNIST IDX files",
        )),
    }
}

fn pool_kind(cfg: &ExperimentConfig) -> Result<PoolKind> {
    Ok(match cfg.pooling {
        Pooling::Max => PoolKind::Max,
        Pooling::Avg => PoolKind::Avg,
        Pooling::ContinuousSum => PoolKind::Continuous(ContinuousPoolSpec::drop_in(
            cfg.iterations,
            StepVariant::Sum,
        )?),
        Pooling::ContinuousMax => PoolKind::Continuous(ContinuousPoolSpec::drop_in(
            cfg.iterations,
            StepVariant::Max,
        )?),
    })
}

fn build_model<T: Scalar>(cfg: &ExperimentConfig) -> Result<LeNet<T>> {
    let pool = pool_kind(cfg)?;
    LeNet::new(
        LeNetConfig::standard(cfg.task.classes()),
        pool.clone(),
        pool,
        cfg.init_strength,
        cfg.seed,
    )
}

/// Step-size multiplier for pooling strengths. Useful strengths span a few
/// units while weight displacements stay in the hundredths; at the shared
/// learning rate the receptive fields would barely move off their
/// initialization within a training budget.
const STRENGTH_LR_SCALE: f64 = 20.0;

fn build_optimizer<T: Scalar>(cfg: &ExperimentConfig, model: &LeNet<T>) -> Optimizer<T> {
    let mut opt = match cfg.optimizer {
        OptimizerChoice::Adam => Optimizer::adam(cfg.learning_rate),
        OptimizerChoice::Sgd => Optimizer::sgd_momentum(cfg.learning_rate, cfg.momentum),
    };
    for (at, name) in model.param_names().iter().enumerate() {
        if name.ends_with(".strengths") {
            opt.set_param_scale(at, STRENGTH_LR_SCALE);
        }
    }
    opt
}

fn distance_limit(task: Task) -> Option<f64> {
    match task {
        Task::Distance => None,
        Task::DistanceLimited => Some(DISTANCE_LIMIT_SQ),
        Task::Mnist => unreachable!("mnist has no distance limit"),
    }
}

fn eval_dataset<T: Scalar>(cfg: &ExperimentConfig) -> Result<Dataset<T>> {
    match cfg.task {
        Task::Mnist => {
            let dir = mnist_dir()?;
            let (images, labels) = mnist_paths(&dir, false);
            Ok(load_mnist(&images, &labels, None)?.truncated(cfg.eval_size))
        }
        task => generate_distance_dataset(
            cfg.eval_size,
            DISTANCE_IMAGE_SIZE,
            distance_limit(task),
            cfg.seed.wrapping_add(EVAL_SEED_OFFSET),
        ),
    }
}

fn save_model<T: Scalar>(path: &Path, model: &LeNet<T>) -> Result<()> {
    let entries: Vec<(&str, &Tensor<T>)> = model
        .param_names()
        .iter()
        .map(|n| n.as_str())
        .zip(model.params())
        .collect();
    write_checkpoint(path, entries)
}

fn load_model<T: Scalar>(path: &Path, model: &mut LeNet<T>) -> Result<()> {
    let records = read_checkpoint::<T>(path)?;
    if records.len() != model.params().len() {
        return Err(Error::data(format!(
            "{}: holds {} tensors but the model has {} parameters",
            path.display(),
            records.len(),
            model.params().len()
        )));
    }
    for (name, tensor) in records {
        model.set_param(&name, tensor)?;
    }
    Ok(())
}

/// Runs training per the config, then writes `config.txt`, `metrics.csv`,
/// and `model.ckpt` into the config's out_dir. Prints and returns the final
/// eval metric.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<f64> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(config_path(&cfg.out_dir), cfg.to_text())?;

    let mut model = build_model::<f32>(cfg)?;
    let mut opt = build_optimizer::<f32>(cfg, &model);
    let eval_data = eval_dataset::<f32>(cfg)?;
    let options = TrainOptions {
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        eval_every: cfg.eval_every,
    };
    let records = match cfg.task {
        Task::Mnist => {
            let dir = mnist_dir()?;
            let (images, labels) = mnist_paths(&dir, true);
            let train_data: Dataset<f32> =
                load_mnist(&images, &labels, Some(cfg.mnist_train_count))?;
            let mut stream = ShuffledStream::new(&train_data, cfg.seed);
            train(&mut model, &mut opt, &mut stream, &eval_data, &options)?
        }
        task => {
            let mut stream =
                DistanceStream::new(DISTANCE_IMAGE_SIZE, distance_limit(task), cfg.seed)?;
            train(&mut model, &mut opt, &mut stream, &eval_data, &options)?
        }
    };
    fs::write(metrics_path(&cfg.out_dir), records_to_csv(&records))?;
    save_model(&checkpoint_path(&cfg.out_dir), &model)?;
    let last = records.last().expect("train always yields records");
    println!("final eval_metric {:.4}", last.eval_metric);
    Ok(last.eval_metric)
}

/// Rebuilds the run's model (quantized variant on request), evaluates it on
/// the task's eval set, and prints the metric with 4 decimals.
pub fn cmd_eval(
    dir: &Path,
    quantized: bool,
    eval_size: Option<usize>,
    threads: usize,
) -> Result<f64> {
    let mut cfg = ExperimentConfig::from_text(&read_text(&config_path(dir))?)?;
    if let Some(n) = eval_size {
        cfg.eval_size = n;
    }
    let model = if quantized {
        load_quantized_model(dir, &cfg)?
    } else {
        let mut model = build_model::<f32>(&cfg)?;
        load_model(&checkpoint_path(dir), &mut model)?;
        model
    };
    let eval_data = eval_dataset::<f32>(&cfg)?;
    let metric = if threads > 1 {
        evaluate_parallel(&model, &eval_data, cfg.batch_size, threads)?
    } else {
        evaluate(&model, &eval_data, cfg.batch_size)?
    };
    println!("{metric:.4}");
    Ok(metric)
}

fn load_quantized_model(dir: &Path, cfg: &ExperimentConfig) -> Result<LeNet<f32>> {
    if !cfg.pooling.is_continuous() {
        return Err(Error::invalid(
            "eval",
            "run was not trained with continuous pooling, so it has no quantized form",
        ));
    }
    let stage = |i: usize| -> Result<PoolKind> {
        let text = read_text(&plan_path(dir, i))?;
        Ok(PoolKind::Quantized {
            plan: QuantizedPoolPlan::from_text(&text)?,
            downsample: Downsample::MaxPool,
            stride: 2,
        })
    };
    let mut model = LeNet::new(
        LeNetConfig::standard(cfg.task.classes()),
        stage(1)?,
        stage(2)?,
        cfg.init_strength,
        cfg.seed,
    )?;
    load_model(&quant_checkpoint_path(dir), &mut model)?;
    Ok(model)
}

/// Probes one continuous layer with a centered impulse, writes the
/// normalized response as a PGM, and prints the measured 50% Chebyshev
/// radius. Runs in f64.
pub fn cmd_dirac(
    strength: f64,
    iterations: usize,
    size: usize,
    variant: StepVariant,
    out: &Path,
) -> Result<usize> {
    let spec = ContinuousPoolSpec::new(iterations, variant, Downsample::None, 1)?;
    let schedule = PoolStrengthSchedule::<f64>::constant(iterations, 1, strength, false);
    let mut g = GradGraph::inference();
    let response = g.dirac_response(&spec, &schedule, size)?;
    let radius = measure_radius(&response, 0, RadiusRule::Chebyshev)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_pgm(out, &response)?;
    let radius = radius as usize;
    println!("radius {radius}");
    Ok(radius)
}

/// Quantizes a trained continuous run: writes per-stage `CPOOL-PLAN` files
/// and a strength-free checkpoint, optionally fine-tuning it first.
pub fn cmd_quantize(
    dir: &Path,
    probe_size: Option<usize>,
    rule: RadiusRule,
    fine_tune_steps: usize,
) -> Result<()> {
    let cfg = ExperimentConfig::from_text(&read_text(&config_path(dir))?)?;
    if !cfg.pooling.is_continuous() {
        return Err(Error::invalid(
            "quantize",
            "run was not trained with continuous pooling",
        ));
    }
    let mut model = build_model::<f32>(&cfg)?;
    load_model(&checkpoint_path(dir), &mut model)?;
    // Diffusion moves mass at most one pixel per iteration, so this probe
    // always keeps the response clear of the measurement border.
    let probe = probe_size.unwrap_or(2 * cfg.iterations + 3);
    let mut quantized = model.quantized(probe, rule)?;
    for (i, pool) in [quantized.pool1(), quantized.pool2()]
        .into_iter()
        .enumerate()
    {
        match pool {
            PoolKind::Quantized { plan, .. } => {
                fs::write(plan_path(dir, i + 1), plan.to_text())?;
            }
            other => {
                return Err(Error::invalid(
                    "quantize",
                    format!("stage {} did not quantize: {other:?}", i + 1),
                ))
            }
        }
    }
    if fine_tune_steps > 0 {
        let mut opt = build_optimizer::<f32>(&cfg, &quantized);
        let eval_data = eval_dataset::<f32>(&cfg)?;
        let options = TrainOptions {
            steps: fine_tune_steps,
            batch_size: cfg.batch_size,
            eval_every: cfg.eval_every,
        };
        let records = match cfg.task {
            Task::Mnist => {
                let data_dir = mnist_dir()?;
                let (images, labels) = mnist_paths(&data_dir, true);
                let train_data: Dataset<f32> =
                    load_mnist(&images, &labels, Some(cfg.mnist_train_count))?;
                let mut stream =
                    ShuffledStream::new(&train_data, cfg.seed.wrapping_add(FINETUNE_SEED_OFFSET));
                train(&mut quantized, &mut opt, &mut stream, &eval_data, &options)?
            }
            task => {
                let mut stream = DistanceStream::new(
                    DISTANCE_IMAGE_SIZE,
                    distance_limit(task),
                    cfg.seed.wrapping_add(FINETUNE_SEED_OFFSET),
                )?;
                train(&mut quantized, &mut opt, &mut stream, &eval_data, &options)?
            }
        };
        fs::write(finetune_metrics_path(dir), records_to_csv(&records))?;
    }
    save_model(&quant_checkpoint_path(dir), &quantized)?;
    Ok(())
}

/// Dumps synthetic samples as checkpoint-layout tensor records
/// (`sample{i}.image`, `sample{i}.target`) for regression baselines.
pub fn cmd_gen_data(task: Task, count: usize, seed: u64, out: &Path) -> Result<()> {
    if task == Task::Mnist {
        return Err(Error::invalid(
            "gen-data",
            "mnist comes from IDX files; only the synthetic tasks can be generated",
        ));
    }
    if count == 0 {
        return Err(Error::invalid("gen-data", "count must be at least 1"));
    }
    let data: Dataset<f32> =
        generate_distance_dataset(count, DISTANCE_IMAGE_SIZE, distance_limit(task), seed)?;
    let side = DISTANCE_IMAGE_SIZE;
    let targets = match data.targets() {
        cpool::data::DatasetTargets::Values(v) => v.clone(),
        cpool::data::DatasetTargets::Labels(_) => unreachable!("distance targets are values"),
    };
    let mut names = Vec::with_capacity(2 * count);
    let mut tensors = Vec::with_capacity(2 * count);
    for i in 0..count {
        names.push(format!("sample{i}.image"));
        tensors.push(Tensor::new(
            Shape::new(1, 1, side, side),
            data.image(i).to_vec(),
        )?);
        names.push(format!("sample{i}.target"));
        tensors.push(Tensor::new(Shape::new(1, 1, 1, 1), vec![targets[i]])?);
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_checkpoint(out, names.iter().map(|n| n.as_str()).zip(tensors.iter()))?;
    println!("wrote {count} samples to {}", out.display());
    Ok(())
}

/// Runs the finite-difference suites and prints one line per suite.
/// Any failure is a numeric error (exit code 3 at the binary boundary).
pub fn cmd_gradcheck(op_trials: usize, lenet_trials: usize, seed: u64) -> Result<()> {
    let results = run_default_suites(op_trials, lenet_trials, seed)?;
    let mut failed = false;
    for r in &results {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "suite {}: max rel err {:.3e} over {} trials (tol {:.0e}) {}",
            r.name, r.max_rel_err, r.trials, r.tolerance, verdict
        );
        failed |= !r.passed();
    }
    if failed {
        return Err(Error::numeric("gradient check failed"));
    }
    Ok(())
}
