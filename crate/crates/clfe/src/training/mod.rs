//! Seeded training: minibatched Adam steps, per-epoch validation/test
//! evaluation, reduce-on-plateau decay with the 1e-6 termination rule, and
//! best-validation model selection. `run_seeds` repeats a run over several
//! seeds and aggregates mean and sample standard deviation.

mod adam;
mod schedule;

pub use adam::AdamState;
pub use schedule::{ScheduleSignal, ScheduleState, LR_FLOOR};

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{batch, Graph, GraphError};
use crate::heads::metrics::{
    accuracy_weighted, f1_positive, hits_at_k, mae, MetricError, MetricKind,
};
use crate::model::{argmax_rows, Model, ModelError};
use crate::tensor::{Phase, Tensor};

/// Seeds the experiments use unless told otherwise.
pub const DEFAULT_SEEDS: [u64; 4] = [9, 23, 41, 42];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("loss became non-finite at epoch {epoch}, batch {batch}, lr {lr:e}")]
    NanLoss { epoch: usize, batch: usize, lr: f64 },
    #[error("the {which} split is empty")]
    EmptySplit { which: &'static str },
    #[error("optimizer state built for {expected} parameters, stepped with {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("gradient for {name} has shape {found}, expected {expected}")]
    GradShape { name: String, expected: String, found: String },
    #[error("no seeds given")]
    NoSeeds,
    #[error("every seed failed; first failure: {first}")]
    AllSeedsFailed { first: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Train/validation/test graphs. The splits must be disjoint; the trainer
/// never checks overlap.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<Graph>,
    pub val: Vec<Graph>,
    pub test: Vec<Graph>,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub gamma: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub metric: MetricKind,
    /// K for the Hits@K metric.
    pub hits_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            gamma: 0.5,
            patience: 5,
            max_epochs: 100,
            batch_size: 32,
            seed: DEFAULT_SEEDS[0],
            metric: MetricKind::AccuracyWeighted,
            hits_k: 10,
        }
    }
}

/// One epoch of a run. Equality ignores the wall-time field, which is the
/// only non-deterministic column.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_metric: f64,
    pub val_metric: f64,
    pub test_metric: f64,
    pub lr: f64,
    pub seconds: f64,
}

impl PartialEq for EpochRecord {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.train_loss == other.train_loss
            && self.val_loss == other.val_loss
            && self.train_metric == other.train_metric
            && self.val_metric == other.val_metric
            && self.test_metric == other.test_metric
            && self.lr == other.lr
    }
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str =
        "epoch,train_loss,val_loss,train_metric,val_metric,test_metric,lr,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.val_loss,
            self.train_metric,
            self.val_metric,
            self.test_metric,
            self.lr,
            self.seconds
        )
    }
}

/// Streams epoch records to a CSV writer as they complete.
pub struct EpochCsvSink<'a> {
    writer: &'a mut dyn Write,
    wrote_header: bool,
}

impl<'a> EpochCsvSink<'a> {
    pub fn new(writer: &'a mut dyn Write) -> Self {
        EpochCsvSink { writer, wrote_header: false }
    }

    fn record(&mut self, rec: &EpochRecord) -> std::io::Result<()> {
        if !self.wrote_header {
            writeln!(self.writer, "{}", EpochRecord::CSV_HEADER)?;
            self.wrote_header = true;
        }
        writeln!(self.writer, "{}", rec.csv_row())
    }
}

/// Outcome of one training run. The reported test metric comes from the
/// epoch with the best validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub final_test_metric: f64,
    pub final_val_loss: f64,
    pub halted_by_schedule: bool,
}

fn run_chunks<'a>(graphs: &'a [Graph], order: &'a [usize], size: usize) -> Vec<Vec<&'a Graph>> {
    order.chunks(size.max(1)).map(|chunk| chunk.iter().map(|&i| &graphs[i]).collect()).collect()
}

/// Accumulates predictions across batches and computes the configured metric.
struct MetricAccumulator {
    kind: MetricKind,
    hits_k: usize,
    classes: usize,
    pred_labels: Vec<usize>,
    true_labels: Vec<usize>,
    pred_values: Vec<f64>,
    true_values: Vec<f64>,
    pos_scores: Vec<f64>,
    neg_scores: Vec<f64>,
}

impl MetricAccumulator {
    fn new(kind: MetricKind, hits_k: usize, classes: usize) -> Self {
        MetricAccumulator {
            kind,
            hits_k,
            classes,
            pred_labels: Vec::new(),
            true_labels: Vec::new(),
            pred_values: Vec::new(),
            true_values: Vec::new(),
            pos_scores: Vec::new(),
            neg_scores: Vec::new(),
        }
    }

    fn push(&mut self, output: &Tensor, labels: &[usize], targets: &[f64]) {
        match self.kind {
            MetricKind::AccuracyWeighted | MetricKind::F1Positive => {
                self.pred_labels.extend(argmax_rows(output));
                self.true_labels.extend_from_slice(labels);
            }
            MetricKind::HitsAtK => {
                // rank by the margin between the positive and negative class
                for (i, &label) in labels.iter().enumerate() {
                    let row = output.row_slice(i);
                    let score = row[1] - row[0];
                    if label == 1 {
                        self.pos_scores.push(score);
                    } else {
                        self.neg_scores.push(score);
                    }
                }
            }
            MetricKind::Mae => {
                self.pred_values.extend(output.data().iter().copied());
                self.true_values.extend_from_slice(targets);
            }
        }
    }

    fn finish(&self) -> Result<f64, MetricError> {
        Ok(match self.kind {
            MetricKind::AccuracyWeighted => {
                accuracy_weighted(&self.pred_labels, &self.true_labels, self.classes)?.value
            }
            MetricKind::F1Positive => f1_positive(&self.pred_labels, &self.true_labels)?.value,
            MetricKind::HitsAtK => {
                hits_at_k(&self.pos_scores, &self.neg_scores, self.hits_k)?.value
            }
            MetricKind::Mae => mae(&self.pred_values, &self.true_values)?.value,
        })
    }
}

fn evaluate(
    model: &mut Model,
    graphs: &[Graph],
    cfg: &TrainConfig,
) -> Result<(f64, f64), TrainError> {
    let mut acc = MetricAccumulator::new(cfg.metric, cfg.hits_k, model.classes());
    let mut loss_sum = 0.0;
    let mut rows = 0usize;
    let order: Vec<usize> = (0..graphs.len()).collect();
    for chunk in run_chunks(graphs, &order, cfg.batch_size) {
        let owned: Vec<Graph> = chunk.iter().map(|&g| g.clone()).collect();
        let b = batch(&owned)?;
        let step = model.forward(&b, Phase::Eval)?;
        let n = step.tape.value(step.output).rows();
        loss_sum += step.tape.value(step.loss).data()[0] * n as f64;
        rows += n;
        acc.push(step.tape.value(step.output), &step.labels, &step.targets);
    }
    Ok((loss_sum / rows as f64, acc.finish()?))
}

/// Trains `model` on the splits under `cfg`. Each epoch shuffles the train
/// set with the run's seeded stream, steps Adam per minibatch, evaluates the
/// validation and test splits in eval mode, then applies plateau decay;
/// training stops at `max_epochs` or when the rate crosses the floor.
pub fn train(
    model: &mut Model,
    data: &Splits,
    cfg: &TrainConfig,
    mut sink: Option<&mut EpochCsvSink>,
) -> Result<TrainRun, TrainError> {
    if data.train.is_empty() {
        return Err(TrainError::EmptySplit { which: "train" });
    }
    if data.val.is_empty() {
        return Err(TrainError::EmptySplit { which: "val" });
    }
    if data.test.is_empty() {
        return Err(TrainError::EmptySplit { which: "test" });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e5e_d0d0_cafe_f00d);
    let mut adam = AdamState::new(&model.params());
    let mut sched = ScheduleState::new(cfg.lr, cfg.gamma, cfg.patience);
    let mut records: Vec<EpochRecord> = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_val = f64::INFINITY;
    let mut halted = false;

    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        let lr = sched.lr();
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng);
        let mut train_acc = MetricAccumulator::new(cfg.metric, cfg.hits_k, model.classes());
        let mut loss_sum = 0.0;
        let mut rows = 0usize;
        for (bi, chunk) in run_chunks(&data.train, &order, cfg.batch_size).into_iter().enumerate()
        {
            let owned: Vec<Graph> = chunk.iter().map(|&g| g.clone()).collect();
            let b = batch(&owned)?;
            let mut step = model.forward(&b, Phase::Train)?;
            let loss_value = step.tape.value(step.loss).data()[0];
            if !loss_value.is_finite() {
                return Err(TrainError::NanLoss { epoch, batch: bi, lr });
            }
            let n = step.tape.value(step.output).rows();
            loss_sum += loss_value * n as f64;
            rows += n;
            train_acc.push(step.tape.value(step.output), &step.labels, &step.targets);
            step.tape.backward(step.loss).map_err(ModelError::from)?;
            let grads: Vec<Tensor> = step
                .param_ids
                .iter()
                .zip(model.params())
                .map(|(&id, p)| {
                    step.tape
                        .grad(id)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(p.value.rows(), p.value.cols()))
                })
                .collect();
            adam.step(&mut model.params_mut(), &grads, lr)?;
        }
        let train_loss = loss_sum / rows as f64;
        let train_metric = train_acc.finish()?;
        let (val_loss, val_metric) = evaluate(model, &data.val, cfg)?;
        let (_, test_metric) = evaluate(model, &data.test, cfg)?;

        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            train_metric,
            val_metric,
            test_metric,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(s) = sink.as_deref_mut() {
            s.record(&record)?;
        }
        records.push(record);
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
        }
        if sched.observe(val_loss) == ScheduleSignal::Halt {
            halted = true;
            break;
        }
    }
    let final_test_metric = records[best_epoch].test_metric;
    Ok(TrainRun {
        records,
        best_epoch,
        final_test_metric,
        final_val_loss: best_val,
        halted_by_schedule: halted,
    })
}

/// A finished or failed seed run.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub outcome: Result<TrainRun, String>,
}

/// Multi-seed aggregate: mean and sample (n-1) standard deviation of the
/// per-seed final test metrics, computed over the seeds that finished.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub metric: MetricKind,
    pub per_seed: Vec<SeedRun>,
    pub mean: f64,
    pub std: f64,
}

impl RunResult {
    pub fn completed(&self) -> usize {
        self.per_seed.iter().filter(|s| s.outcome.is_ok()).count()
    }

    pub fn failed(&self) -> usize {
        self.per_seed.len() - self.completed()
    }
}

pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    (mean, std)
}

/// Trains one model per seed with `build` and aggregates the results. Failed
/// seeds are recorded and excluded from the aggregate; the call only errors
/// when no seed survives.
pub fn run_seeds<F>(
    mut build: F,
    data: &Splits,
    cfg: &TrainConfig,
    seeds: &[u64],
    mut sinks: Option<&mut dyn FnMut(u64) -> Option<std::fs::File>>,
) -> Result<RunResult, TrainError>
where
    F: FnMut(u64) -> Result<Model, ModelError>,
{
    if seeds.is_empty() {
        return Err(TrainError::NoSeeds);
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = seed;
        let outcome = build(seed).map_err(TrainError::from).and_then(|mut model| {
            let mut file = sinks.as_deref_mut().and_then(|f| f(seed));
            match file.as_mut() {
                Some(f) => {
                    let mut sink = EpochCsvSink::new(f);
                    train(&mut model, data, &run_cfg, Some(&mut sink))
                }
                None => train(&mut model, data, &run_cfg, None),
            }
        });
        per_seed.push(SeedRun { seed, outcome: outcome.map_err(|e| e.to_string()) });
    }
    let finished: Vec<f64> = per_seed
        .iter()
        .filter_map(|s| s.outcome.as_ref().ok().map(|r| r.final_test_metric))
        .collect();
    if finished.is_empty() {
        let first = per_seed[0].outcome.as_ref().err().cloned().unwrap_or_default();
        return Err(TrainError::AllSeedsFailed { first });
    }
    let (mean, std) = mean_and_sample_std(&finished);
    Ok(RunResult { metric: cfg.metric, per_seed, mean, std })
}
