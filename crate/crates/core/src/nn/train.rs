//! The mini-batch training loop and dataset evaluation.
//!
//! Training is single-threaded and bit-reproducible for a fixed seed.
//! Evaluation computes one score per sample (squared error or 0/1 hit) and
//! reduces in storage order, so the metric is independent of batching —
//! the parallel evaluator returns bit-identical results to the serial one.

use crate::data::{Batch, BatchStream, Dataset, DatasetTargets, Targets};
use crate::error::{Error, Result};
use crate::graph::GradGraph;
use crate::nn::lenet::LeNet;
use crate::nn::loss::{argmax_rows, mse_loss, softmax_cross_entropy};
use crate::nn::optim::Optimizer;
use crate::scalar::Scalar;

/// What `evaluate` reports for a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMetric {
    /// Mean squared error (regression targets).
    Mse,
    /// Fraction of correctly classified samples.
    Accuracy,
}

impl EvalMetric {
    pub fn of<T: Scalar>(data: &Dataset<T>) -> Self {
        match data.targets() {
            DatasetTargets::Values(_) => EvalMetric::Mse,
            DatasetTargets::Labels(_) => EvalMetric::Accuracy,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EvalMetric::Mse => "mse",
            EvalMetric::Accuracy => "accuracy",
        }
    }
}

/// Loop controls. `eval_every` is in steps; the final step always records.
#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub eval_every: usize,
}

/// One metrics row: mean training loss since the previous row, and the
/// eval metric at this step. The step-0 row has no training loss (NaN).
#[derive(Clone, Copy, Debug)]
pub struct TrainRecord {
    pub step: usize,
    pub train_loss: f64,
    pub eval_metric: f64,
}

/// Serializes records as `step,train_loss,eval_metric` CSV.
pub fn records_to_csv(records: &[TrainRecord]) -> String {
    let mut out = String::from("step,train_loss,eval_metric\n");
    for r in records {
        out.push_str(&format!("{},{},{}\n", r.step, r.train_loss, r.eval_metric));
    }
    out
}

/// Per-sample scores over `data[span]`, processed in chunks of `batch`.
fn eval_scores<T: Scalar>(
    model: &LeNet<T>,
    data: &Dataset<T>,
    batch: usize,
    span: std::ops::Range<usize>,
) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(span.len());
    let mut start = span.start;
    while start < span.end {
        let end = (start + batch).min(span.end);
        let indices: Vec<usize> = (start..end).collect();
        let b = data.batch(&indices)?;
        let mut g = GradGraph::inference();
        let out = model.forward(&mut g, &b.images)?;
        match &b.targets {
            Targets::Values(t) => {
                for (&p, &y) in out.data().iter().zip(t.data()) {
                    let d = p.to_f64() - y.to_f64();
                    scores.push(d * d);
                }
            }
            Targets::Labels(l) => {
                for (p, y) in argmax_rows(&out).iter().zip(l) {
                    scores.push(if p == y { 1.0 } else { 0.0 });
                }
            }
        }
        start = end;
    }
    Ok(scores)
}

fn mean(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("evaluate", "empty dataset"));
    }
    let total: f64 = scores.iter().sum();
    let m = total / scores.len() as f64;
    if !m.is_finite() {
        return Err(Error::numeric("evaluation metric is not finite"));
    }
    Ok(m)
}

/// Evaluates the model over the whole dataset (MSE or accuracy, by target
/// kind), single-threaded.
pub fn evaluate<T: Scalar>(model: &LeNet<T>, data: &Dataset<T>, batch: usize) -> Result<f64> {
    if batch == 0 {
        return Err(Error::invalid("evaluate", "batch size 0"));
    }
    mean(&eval_scores(model, data, batch, 0..data.len())?)
}

/// Same metric, computed by `threads` worker threads over contiguous spans
/// aligned to batch boundaries. Scores are concatenated in sample order,
/// so the result is bit-identical to the serial evaluator.
pub fn evaluate_parallel<T: Scalar>(
    model: &LeNet<T>,
    data: &Dataset<T>,
    batch: usize,
    threads: usize,
) -> Result<f64> {
    if batch == 0 {
        return Err(Error::invalid("evaluate", "batch size 0"));
    }
    let threads = threads.max(1);
    if threads == 1 || data.len() <= batch {
        return evaluate(model, data, batch);
    }
    let chunks = data.len().div_ceil(batch);
    let per_thread = chunks.div_ceil(threads) * batch;
    let spans: Vec<std::ops::Range<usize>> = (0..threads)
        .map(|t| (t * per_thread).min(data.len())..((t + 1) * per_thread).min(data.len()))
        .filter(|s| !s.is_empty())
        .collect();
    let results = std::thread::scope(|scope| {
        let handles: Vec<_> = spans
            .into_iter()
            .map(|span| scope.spawn(move || eval_scores(model, data, batch, span)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("eval worker panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut scores = Vec::with_capacity(data.len());
    for part in results {
        scores.extend(part);
    }
    mean(&scores)
}

/// Runs `options.steps` optimizer steps, recording the eval metric at step
/// 0, every `eval_every` steps, and at the final step. Fails on a
/// non-finite training loss.
pub fn train<T: Scalar>(
    model: &mut LeNet<T>,
    opt: &mut Optimizer<T>,
    stream: &mut dyn BatchStream<T>,
    eval_data: &Dataset<T>,
    options: &TrainOptions,
) -> Result<Vec<TrainRecord>> {
    if options.batch_size == 0 {
        return Err(Error::invalid("train", "batch size 0"));
    }
    if options.eval_every == 0 {
        return Err(Error::invalid("train", "eval cadence 0"));
    }
    let mut records = vec![TrainRecord {
        step: 0,
        train_loss: f64::NAN,
        eval_metric: evaluate(model, eval_data, options.batch_size)?,
    }];
    let mut loss_sum = 0.0;
    let mut loss_n = 0usize;
    for step in 1..=options.steps {
        let Batch { images, targets } = stream.next_batch(options.batch_size)?;
        let mut g = GradGraph::new();
        let out = model.forward(&mut g, &images)?;
        let loss = match &targets {
            Targets::Values(t) => mse_loss(&mut g, &out, t)?,
            Targets::Labels(l) => softmax_cross_entropy(&mut g, &out, l)?,
        };
        let lv = loss.data()[0].to_f64();
        if !lv.is_finite() {
            return Err(Error::numeric(format!(
                "training loss became non-finite at step {step}"
            )));
        }
        let grads = g.backward(&loss)?;
        opt.step(model.params_mut(), &grads)?;
        loss_sum += lv;
        loss_n += 1;
        if step % options.eval_every == 0 || step == options.steps {
            records.push(TrainRecord {
                step,
                train_loss: loss_sum / loss_n as f64,
                eval_metric: evaluate(model, eval_data, options.batch_size)?,
            });
            loss_sum = 0.0;
            loss_n = 0;
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_distance_dataset, DistanceStream, ShuffledStream};
    use crate::nn::lenet::{LeNetConfig, PoolKind};

    fn tiny_regression(seed: u64) -> LeNet<f64> {
        LeNet::new(
            LeNetConfig::tiny(1),
            PoolKind::Max,
            PoolKind::Max,
            0.1,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_steps_yields_only_the_initial_eval_row() {
        let mut model = tiny_regression(0);
        let mut opt = Optimizer::adam(1e-4);
        let eval = generate_distance_dataset(8, 16, Some(9.0), 100).unwrap();
        let mut stream = DistanceStream::new(16, Some(9.0), 1).unwrap();
        let records = train(
            &mut model,
            &mut opt,
            &mut stream,
            &eval,
            &TrainOptions {
                steps: 0,
                batch_size: 4,
                eval_every: 10,
            },
        )
        .unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].step, 0);
        assert!(records[0].train_loss.is_nan());
        assert!(records[0].eval_metric.is_finite());
    }

    #[test]
    fn records_follow_the_eval_cadence() {
        let mut model = tiny_regression(1);
        let mut opt = Optimizer::adam(1e-3);
        let eval = generate_distance_dataset(4, 16, Some(9.0), 100).unwrap();
        let mut stream = DistanceStream::new(16, Some(9.0), 2).unwrap();
        let records = train(
            &mut model,
            &mut opt,
            &mut stream,
            &eval,
            &TrainOptions {
                steps: 5,
                batch_size: 2,
                eval_every: 2,
            },
        )
        .unwrap();
        let steps: Vec<usize> = records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 2, 4, 5]);
        assert!(records[1..].iter().all(|r| r.train_loss.is_finite()));
    }

    #[test]
    fn training_is_bit_reproducible() {
        let run = || {
            let mut model = tiny_regression(3);
            let mut opt = Optimizer::adam(1e-3);
            let eval = generate_distance_dataset(6, 16, Some(9.0), 100).unwrap();
            let mut stream = DistanceStream::new(16, Some(9.0), 4).unwrap();
            train(
                &mut model,
                &mut opt,
                &mut stream,
                &eval,
                &TrainOptions {
                    steps: 6,
                    batch_size: 3,
                    eval_every: 3,
                },
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.step, y.step);
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
            assert_eq!(x.eval_metric.to_bits(), y.eval_metric.to_bits());
        }
    }

    #[test]
    fn one_sample_memorization_drives_the_loss_down() {
        // Smoke test of the full loop: a single repeated sample with a
        // small target must be memorized quickly.
        let mut model = tiny_regression(5);
        let mut opt = Optimizer::adam(1e-2);
        let data = generate_distance_dataset(1, 16, Some(4.0), 42).unwrap();
        let mut stream = ShuffledStream::new(&data, 0);
        let records = train(
            &mut model,
            &mut opt,
            &mut stream,
            &data,
            &TrainOptions {
                steps: 200,
                batch_size: 1,
                eval_every: 200,
            },
        )
        .unwrap();
        let initial = records[0].eval_metric;
        let last = records.last().unwrap().eval_metric;
        assert!(
            last < 0.1 * initial && last < 0.5,
            "memorization stalled: {initial} -> {last}"
        );
    }

    #[test]
    fn parallel_evaluation_is_bit_identical_to_serial() {
        let model = tiny_regression(7);
        let eval = generate_distance_dataset(23, 16, None, 9).unwrap();
        let serial = evaluate(&model, &eval, 4).unwrap();
        for threads in [2, 3, 8] {
            let parallel = evaluate_parallel(&model, &eval, 4, threads).unwrap();
            assert_eq!(serial.to_bits(), parallel.to_bits(), "{threads} threads");
        }
    }

    #[test]
    fn csv_rows_match_records() {
        let records = [
            TrainRecord {
                step: 0,
                train_loss: f64::NAN,
                eval_metric: 2.5,
            },
            TrainRecord {
                step: 100,
                train_loss: 0.125,
                eval_metric: 1.75,
            },
        ];
        assert_eq!(
            records_to_csv(&records),
            "step,train_loss,eval_metric\n0,NaN,2.5\n100,0.125,1.75\n"
        );
    }

    #[test]
    fn metric_kind_follows_target_kind() {
        let reg = generate_distance_dataset::<f32>(2, 16, None, 0).unwrap();
        assert_eq!(EvalMetric::of(&reg), EvalMetric::Mse);
        assert_eq!(EvalMetric::Mse.name(), "mse");
        assert_eq!(EvalMetric::Accuracy.name(), "accuracy");
    }
}
