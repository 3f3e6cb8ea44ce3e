//! Training with early stopping, grid search, timing, gradient checks,
//! checkpoints and run reports.

mod bench;
mod checkpoint;
mod search;

pub use bench::{count_params, gradcheck_suite, time_epochs, GradcheckRow, GradcheckSuite, SUITE_MAX_PARAMS};
pub use checkpoint::{load_checkpoint, load_checkpoint_into, save_checkpoint, CHECKPOINT_VERSION};
pub use search::{grid_search, grid_search_with_model, select_best, thread_count, GridAxes, GridPoint, GridTrial, THREADS_ENV};

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::gnn::{link_logits, GraphInput, Model, ModelSpec};
use crate::graph::{holdout_split, lp_edge_split, make_batch, Dataset, Fold, Graph, Labels, LinkSplit, Task};
use crate::nn::{accuracy, mean_absolute_error, roc_auc, Adam};
use crate::params::Ctx;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mae,
    Bce,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    Mae,
    RocAuc,
}

impl MetricKind {
    pub fn higher_is_better(self) -> bool {
        !matches!(self, Self::Mae)
    }
}

fn task_defaults(task: &Task) -> (LossKind, MetricKind) {
    match task {
        Task::NodeClassification { .. } | Task::GraphClassification { .. } => {
            (LossKind::CrossEntropy, MetricKind::Accuracy)
        }
        Task::GraphRegression { .. } => (LossKind::Mae, MetricKind::Mae),
        Task::LinkPrediction => (LossKind::Bce, MetricKind::RocAuc),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    /// Graphs per minibatch; node and link tasks train full-batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Independent runs with seeds `seed, seed + 1, ..`.
    pub repeats: usize,
    /// Fixed by the task when unset.
    pub loss: Option<LossKind>,
    pub metric: Option<MetricKind>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            patience: 20,
            lr: 0.01,
            batch_size: 128,
            seed: 0,
            repeats: 1,
            loss: None,
            metric: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        Ok(())
    }

    /// Loss and metric for a task, rejecting explicit choices that do not fit.
    pub fn resolve(&self, task: &Task) -> Result<(LossKind, MetricKind)> {
        let (loss, metric) = task_defaults(task);
        if let Some(l) = self.loss {
            if l != loss {
                return Err(Error::Config(format!("loss {l:?} does not fit task {task:?}")));
            }
        }
        if let Some(m) = self.metric {
            if m != metric {
                return Err(Error::Config(format!("metric {m:?} does not fit task {task:?}")));
            }
        }
        Ok((loss, metric))
    }
}

/// Tracks the best validation loss and decides when to stop.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records the validation loss of `epoch`; only a strict decrease counts
    /// as an improvement.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Verdict {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            Verdict::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Continue
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// How a dataset is divided for one training run.
#[derive(Clone, Debug)]
pub enum DataSplit {
    /// Node indices (node tasks) or graph indices (graph tasks).
    Samples(Fold),
    /// Message-passing graph without held-out edges, plus the edge split.
    Links(Box<Graph>, LinkSplit),
}

/// The dataset's first stored fold, or a seeded holdout: 20/20 % of nodes,
/// 10/20 % of graphs, or 5/10 % of edges for validation/test.
pub fn default_split(ds: &Dataset, seed: u64) -> Result<DataSplit> {
    if let Task::LinkPrediction = ds.task {
        let (g, split) = lp_edge_split(&ds.graphs[0], 0.05, 0.1, seed)?;
        return Ok(DataSplit::Links(Box::new(g), split));
    }
    if let Some(fold) = ds.splits.as_ref().and_then(|s| s.first()) {
        return Ok(DataSplit::Samples(fold.clone()));
    }
    let strata = ds.strata();
    let (val, test) = match ds.task {
        Task::NodeClassification { .. } => (0.2, 0.2),
        _ => (0.1, 0.2),
    };
    Ok(DataSplit::Samples(holdout_split(
        ds.num_samples(),
        val,
        test,
        strata.as_deref(),
        seed,
    )?))
}

/// `count` splits for repeated evaluation: the stored folds in order when
/// the dataset ships enough of them, else seeded holdouts from `seed`,
/// `seed + 1`, ...
pub fn splits_for(ds: &Dataset, count: usize, seed: u64) -> Result<Vec<DataSplit>> {
    if count == 0 {
        return Err(Error::Config("at least one split is required".into()));
    }
    if !matches!(ds.task, Task::LinkPrediction) {
        if let Some(folds) = ds.splits.as_ref().filter(|f| f.len() >= count) {
            return Ok(folds[..count].iter().cloned().map(DataSplit::Samples).collect());
        }
    }
    let mut plain = ds.clone();
    plain.splits = None;
    (0..count as u64).map(|i| default_split(&plain, seed + i)).collect()
}

#[derive(Clone, Debug)]
enum Target<T> {
    /// Class labels, optionally for a subset of the output rows.
    Classes {
        rows: Option<Arc<[usize]>>,
        labels: Arc<[usize]>,
        num_classes: usize,
    },
    Values(Tensor<T>),
    Links {
        pairs: Vec<(usize, usize)>,
        labels: Vec<T>,
    },
}

/// A forward pass worth of input together with what it is scored against.
#[derive(Clone, Debug)]
struct Chunk<T> {
    input: Arc<GraphInput<T>>,
    target: Target<T>,
}

impl<T: Scalar> Chunk<T> {
    fn len(&self) -> usize {
        match &self.target {
            Target::Classes { labels, .. } => labels.len(),
            Target::Values(t) => t.shape()[0],
            Target::Links { pairs, .. } => pairs.len(),
        }
    }

    /// Loss and the scored outputs (logits, predictions or link logits).
    fn loss(&self, model: &Model<T>, ctx: &mut Ctx<'_, T>) -> Result<(Var, Var)> {
        let out = model.forward(ctx, &self.input)?;
        match &self.target {
            Target::Classes { rows, labels, .. } => {
                let logits = match rows {
                    Some(r) => ctx.tape.gather_rows(out, r.clone())?,
                    None => out,
                };
                Ok((ctx.tape.cross_entropy(logits, labels.clone())?, logits))
            }
            Target::Values(t) => Ok((ctx.tape.mae(out, t)?, out)),
            Target::Links { pairs, labels } => {
                let z = link_logits(&mut ctx.tape, out, pairs)?;
                Ok((ctx.tape.bce_with_logits(z, labels)?, z))
            }
        }
    }

    fn metric(&self, scored: &[f64]) -> Result<f64> {
        match &self.target {
            Target::Classes {
                labels, num_classes, ..
            } => accuracy(scored, *num_classes, labels),
            Target::Values(t) => mean_absolute_error(scored, &t.to_f64_vec()),
            Target::Links { labels, .. } => {
                let truth: Vec<bool> = labels.iter().map(|&l| l > T::zero()).collect();
                roc_auc(scored, &truth)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug)]
enum TrainSet<T> {
    Fixed(Chunk<T>),
    /// Graph indices, batched anew each epoch.
    Graphs(Vec<usize>),
}

/// A dataset prepared for training: inputs, targets and splits.
#[derive(Clone, Debug)]
pub struct Problem<T> {
    task: Task,
    loss: LossKind,
    metric: MetricKind,
    batch_size: usize,
    graphs: Vec<Graph>,
    train: TrainSet<T>,
    train_eval: Chunk<T>,
    val: Chunk<T>,
    test: Chunk<T>,
}

fn nonempty(name: &str, ids: &[usize]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::Data(format!("{name} split is empty")));
    }
    Ok(())
}

impl<T: Scalar> Problem<T> {
    pub fn new(ds: &Dataset, split: &DataSplit, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (loss, metric) = cfg.resolve(&ds.task)?;
        let make = |train, train_eval, val, test, graphs| Self {
            task: ds.task.clone(),
            loss,
            metric,
            batch_size: cfg.batch_size,
            graphs,
            train,
            train_eval,
            val,
            test,
        };
        match (&ds.task, split) {
            (Task::NodeClassification { num_classes }, DataSplit::Samples(fold)) => {
                let g = &ds.graphs[0];
                let Some(Labels::Node(y)) = g.labels() else {
                    return Err(Error::Data("node task without node labels".into()));
                };
                let input = Arc::new(GraphInput::from_graph(g));
                let chunk = |name: &str, ids: &[usize]| -> Result<Chunk<T>> {
                    nonempty(name, ids)?;
                    if let Some(&bad) = ids.iter().find(|&&v| v >= y.len()) {
                        return Err(Error::Data(format!("{name} node {bad} out of range")));
                    }
                    Ok(Chunk {
                        input: input.clone(),
                        target: Target::Classes {
                            rows: Some(ids.into()),
                            labels: ids.iter().map(|&v| y[v]).collect(),
                            num_classes: *num_classes,
                        },
                    })
                };
                let train = chunk("train", &fold.train)?;
                Ok(make(
                    TrainSet::Fixed(train.clone()),
                    train,
                    chunk("validation", &fold.val)?,
                    chunk("test", &fold.test)?,
                    Vec::new(),
                ))
            }
            (Task::GraphClassification { .. } | Task::GraphRegression { .. }, DataSplit::Samples(fold)) => {
                for (name, ids) in [("train", &fold.train), ("validation", &fold.val), ("test", &fold.test)] {
                    nonempty(name, ids)?;
                    if let Some(&bad) = ids.iter().find(|&&i| i >= ds.graphs.len()) {
                        return Err(Error::Data(format!("{name} graph {bad} out of range")));
                    }
                }
                let graphs = ds.graphs.clone();
                let train_eval = graph_chunk(&ds.task, &graphs, &fold.train)?;
                let val = graph_chunk(&ds.task, &graphs, &fold.val)?;
                let test = graph_chunk(&ds.task, &graphs, &fold.test)?;
                Ok(make(TrainSet::Graphs(fold.train.clone()), train_eval, val, test, graphs))
            }
            (Task::LinkPrediction, DataSplit::Links(g, split)) => {
                let input = Arc::new(GraphInput::from_graph(g));
                let chunk = |name: &str, pos: &[(usize, usize)], neg: &[(usize, usize)]| -> Result<Chunk<T>> {
                    if pos.is_empty() || neg.is_empty() {
                        return Err(Error::Data(format!("{name} edge split needs positives and negatives")));
                    }
                    let mut labels = vec![T::one(); pos.len()];
                    labels.resize(pos.len() + neg.len(), T::zero());
                    Ok(Chunk {
                        input: input.clone(),
                        target: Target::Links {
                            pairs: [pos, neg].concat(),
                            labels,
                        },
                    })
                };
                let train = chunk("train", &split.train_pos, &split.train_neg)?;
                Ok(make(
                    TrainSet::Fixed(train.clone()),
                    train,
                    chunk("validation", &split.val_pos, &split.val_neg)?,
                    chunk("test", &split.test_pos, &split.test_neg)?,
                    Vec::new(),
                ))
            }
            (task, _) => Err(Error::Config(format!("split kind does not fit task {task:?}"))),
        }
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn metric_kind(&self) -> MetricKind {
        self.metric
    }

    fn chunk(&self, phase: Phase) -> &Chunk<T> {
        match phase {
            Phase::Train => &self.train_eval,
            Phase::Val => &self.val,
            Phase::Test => &self.test,
        }
    }

    /// Minibatches of one epoch, shuffled by `rng` for graph tasks.
    fn epoch_chunks(&self, rng: &mut ChaCha8Rng) -> Result<Vec<Chunk<T>>> {
        match &self.train {
            TrainSet::Fixed(c) => Ok(vec![c.clone()]),
            TrainSet::Graphs(ids) => {
                let mut order = ids.clone();
                order.shuffle(rng);
                order
                    .chunks(self.batch_size)
                    .map(|ids| graph_chunk(&self.task, &self.graphs, ids))
                    .collect()
            }
        }
    }
}

fn graph_chunk<T: Scalar>(task: &Task, graphs: &[Graph], ids: &[usize]) -> Result<Chunk<T>> {
    let members: Vec<&Graph> = ids.iter().map(|&i| &graphs[i]).collect();
    let batch = make_batch(&members)?;
    let target = match task {
        Task::GraphClassification { num_classes } => Target::Classes {
            rows: None,
            labels: members
                .iter()
                .map(|g| match g.labels() {
                    Some(Labels::Class(c)) => Ok(*c),
                    _ => Err(Error::Data("graph without a class label".into())),
                })
                .collect::<Result<Vec<_>>>()?
                .into(),
            num_classes: *num_classes,
        },
        Task::GraphRegression { target_dim } => {
            let mut data = Vec::with_capacity(members.len() * target_dim);
            for g in &members {
                match g.labels() {
                    Some(Labels::Target(t)) => data.extend_from_slice(t),
                    _ => return Err(Error::Data("graph without a regression target".into())),
                }
            }
            Target::Values(Tensor::from_f64(vec![members.len(), *target_dim], &data)?)
        }
        _ => return Err(Error::Contract("graph chunk for a non-graph task".into())),
    };
    Ok(Chunk {
        input: Arc::new(GraphInput::from_batch(&batch)),
        target,
    })
}

/// Loss and metric of a model on one part of the data (eval mode).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub metric: f64,
}

pub fn evaluate<T: Scalar>(model: &Model<T>, problem: &Problem<T>, phase: Phase) -> Result<Evaluation> {
    let chunk = problem.chunk(phase);
    let mut ctx = Ctx::eval(model.store());
    let (loss, scored) = chunk.loss(model, &mut ctx)?;
    let scored = ctx.tape.value(scored).to_f64_vec();
    Ok(Evaluation {
        loss: ctx.tape.value(loss).item().as_f64(),
        metric: chunk.metric(&scored)?,
    })
}

/// Owns a model and its optimizer state for epoch-by-epoch training.
#[derive(Debug)]
pub struct Trainer<'p, T> {
    model: Model<T>,
    problem: &'p Problem<T>,
    adam: Adam<T>,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl<'p, T: Scalar> Trainer<'p, T> {
    /// Model initialization, shuffling and dropout all derive from `seed`.
    pub fn new(spec: ModelSpec, problem: &'p Problem<T>, lr: f64, seed: u64) -> Result<Self> {
        Ok(Self {
            model: Model::new(spec, seed)?,
            problem,
            adam: Adam::new(lr),
            rng: ChaCha8Rng::seed_from_u64(seed),
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model<T> {
        &mut self.model
    }

    pub fn into_model(self) -> Model<T> {
        self.model
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One pass over the training data; returns the sample-weighted mean
    /// training loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        self.epoch += 1;
        let chunks = self.problem.epoch_chunks(&mut self.rng)?;
        let mut total = 0.0;
        let mut count = 0;
        for (b, chunk) in chunks.iter().enumerate() {
            let (loss, grads, updates) = {
                let mut ctx = Ctx::train(self.model.store(), &mut self.rng);
                let (loss, _) = chunk.loss(&self.model, &mut ctx)?;
                let value = ctx.tape.value(loss).item().as_f64();
                if !value.is_finite() {
                    return Err(Error::NumericAbort {
                        epoch: self.epoch,
                        batch: b + 1,
                        lr: self.adam.lr,
                    });
                }
                let grads = ctx.backward(loss)?;
                (value, grads, ctx.into_updates())
            };
            let store = self.model.store_mut();
            store.zero_grads();
            store.accumulate(&grads)?;
            self.adam.step(store)?;
            store.apply_updates(updates)?;
            total += loss * chunk.len() as f64;
            count += chunk.len();
        }
        Ok(total / count as f64)
    }

    /// Forward passes over the training data without gradients or updates.
    pub fn run_frozen_epoch(&mut self) -> Result<()> {
        let chunks = self.problem.epoch_chunks(&mut self.rng)?;
        for chunk in &chunks {
            let mut ctx = Ctx::new(self.model.store(), crate::params::Mode::Train, false, Some(&mut self.rng));
            chunk.loss(&self.model, &mut ctx)?;
        }
        Ok(())
    }

    pub fn evaluate(&self, phase: Phase) -> Result<Evaluation> {
        evaluate(&self.model, self.problem, phase)
    }
}

/// One training run from one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub best_val_loss: f64,
    pub train_metric: f64,
    pub val_metric: f64,
    pub test_metric: f64,
    pub median_s_per_epoch: f64,
}

/// Trains until validation loss stops improving for `patience` epochs,
/// then restores the best-validation parameters and scores them.
pub fn train_run<T: Scalar>(
    spec: &ModelSpec,
    problem: &Problem<T>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Model<T>, RunSummary)> {
    cfg.validate()?;
    let mut trainer = Trainer::new(spec.clone(), problem, cfg.lr, seed)?;
    let mut stop = EarlyStopping::new(cfg.patience);
    let mut best = trainer.model().store().snapshot();
    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut times = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        train_losses.push(trainer.run_epoch()?);
        times.push(t0.elapsed().as_secs_f64());
        let val = trainer.evaluate(Phase::Val)?.loss;
        val_losses.push(val);
        match stop.observe(epoch, val) {
            Verdict::Improved => best = trainer.model().store().snapshot(),
            Verdict::Continue => {}
            Verdict::Stop => break,
        }
    }
    let mut model = trainer.into_model();
    model.store_mut().restore(&best)?;
    let train = evaluate(&model, problem, Phase::Train)?;
    let val = evaluate(&model, problem, Phase::Val)?;
    let test = evaluate(&model, problem, Phase::Test)?;
    let summary = RunSummary {
        seed,
        epochs_run: train_losses.len(),
        best_epoch: stop.best_epoch(),
        train_losses,
        val_losses,
        best_val_loss: if stop.best_epoch() == 0 { val.loss } else { stop.best() },
        train_metric: train.metric,
        val_metric: val.metric,
        test_metric: test.metric,
        median_s_per_epoch: median(&mut times),
    };
    Ok((model, summary))
}

pub(crate) fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() >= 2).then(|| {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    });
    (mean, std)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub model: ModelSpec,
    pub config: TrainConfig,
    pub loss: LossKind,
    pub metric: MetricKind,
    pub param_count: usize,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunSummary>,
    pub test_mean: f64,
    /// Sample standard deviation; absent for a single run.
    pub test_std: Option<f64>,
    pub median_s_per_epoch: f64,
    pub wall_clock_s: f64,
    pub grid: Option<Vec<GridTrial>>,
}

impl RunReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Per-epoch curves: `run,seed,epoch,train_loss,val_loss`.
    pub fn save_curves_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["run", "seed", "epoch", "train_loss", "val_loss"])
            .map_err(csv_err)?;
        for (r, run) in self.runs.iter().enumerate() {
            for (e, (tl, vl)) in run.train_losses.iter().zip(&run.val_losses).enumerate() {
                w.write_record([
                    r.to_string(),
                    run.seed.to_string(),
                    (e + 1).to_string(),
                    tl.to_string(),
                    vl.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("{other:?}")),
    }
}

/// Runs `cfg.repeats` seeds of [`train_run`] and aggregates the test metric.
pub fn train<T: Scalar>(spec: &ModelSpec, ds: &Dataset, split: &DataSplit, cfg: &TrainConfig) -> Result<RunReport> {
    Ok(train_with_model::<T>(spec, ds, split, cfg)?.0)
}

/// [`train`], also returning the restored model of the first run.
pub fn train_with_model<T: Scalar>(
    spec: &ModelSpec,
    ds: &Dataset,
    split: &DataSplit,
    cfg: &TrainConfig,
) -> Result<(RunReport, Model<T>)> {
    let start = Instant::now();
    let problem = Problem::<T>::new(ds, split, cfg)?;
    train_problem(spec, &ds.name, &problem, cfg, start)
}

pub(crate) fn train_problem<T: Scalar>(
    spec: &ModelSpec,
    dataset: &str,
    problem: &Problem<T>,
    cfg: &TrainConfig,
    start: Instant,
) -> Result<(RunReport, Model<T>)> {
    let seeds: Vec<u64> = (0..cfg.repeats as u64).map(|i| cfg.seed + i).collect();
    let mut runs = Vec::with_capacity(seeds.len());
    let mut first = None;
    for &seed in &seeds {
        let (model, run) = train_run(spec, problem, cfg, seed)?;
        first.get_or_insert(model);
        runs.push(run);
    }
    let model = first.ok_or_else(|| Error::Config("repeats must be at least 1".into()))?;
    let param_count = count_params(&model);
    let tests: Vec<f64> = runs.iter().map(|r| r.test_metric).collect();
    let (test_mean, test_std) = mean_std(&tests);
    let mut times: Vec<f64> = runs.iter().map(|r| r.median_s_per_epoch).collect();
    let report = RunReport {
        dataset: dataset.to_string(),
        model: spec.clone(),
        config: cfg.clone(),
        loss: problem.loss,
        metric: problem.metric,
        param_count,
        seeds,
        runs,
        test_mean,
        test_std,
        median_s_per_epoch: median(&mut times),
        wall_clock_s: start.elapsed().as_secs_f64(),
        grid: None,
    };
    Ok((report, model))
}
