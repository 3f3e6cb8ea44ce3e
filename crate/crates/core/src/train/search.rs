use std::cmp::Ordering;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_problem, train_run, DataSplit, Problem, RunReport, TrainConfig};
use crate::error::{Error, Result};
use crate::gnn::{Model, ModelSpec};
use crate::graph::Dataset;
use crate::scalar::Scalar;

/// Environment variable overriding the worker count of parallel searches.
pub const THREADS_ENV: &str = "KAGNN_THREADS";

/// Worker threads for grid-search trials: `KAGNN_THREADS` when set, else
/// the number of available cores.
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Values to try per hyperparameter; an absent axis keeps the template value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridAxes {
    pub lr: Option<Vec<f64>>,
    pub hidden_dim: Option<Vec<usize>>,
    pub stack_depth: Option<Vec<usize>>,
    pub grid_size: Option<Vec<usize>>,
    pub spline_order: Option<Vec<usize>>,
    pub dropout: Option<Vec<f64>>,
}

/// One assignment of every searchable hyperparameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lr: f64,
    pub hidden_dim: usize,
    pub stack_depth: usize,
    pub grid_size: usize,
    pub spline_order: usize,
    pub dropout: f64,
}

impl GridPoint {
    pub fn of(spec: &ModelSpec, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr,
            hidden_dim: spec.hidden_dim,
            stack_depth: spec.stack_depth,
            grid_size: spec.grid_size,
            spline_order: spec.spline_order,
            dropout: spec.dropout,
        }
    }

    pub fn apply(&self, spec: &ModelSpec, cfg: &TrainConfig) -> (ModelSpec, TrainConfig) {
        let spec = ModelSpec {
            hidden_dim: self.hidden_dim,
            stack_depth: self.stack_depth,
            grid_size: self.grid_size,
            spline_order: self.spline_order,
            dropout: self.dropout,
            ..spec.clone()
        };
        let cfg = TrainConfig {
            lr: self.lr,
            ..cfg.clone()
        };
        (spec, cfg)
    }

    /// Field-by-field order, in declaration order.
    pub fn lexicographic(&self, other: &Self) -> Ordering {
        self.lr
            .total_cmp(&other.lr)
            .then(self.hidden_dim.cmp(&other.hidden_dim))
            .then(self.stack_depth.cmp(&other.stack_depth))
            .then(self.grid_size.cmp(&other.grid_size))
            .then(self.spline_order.cmp(&other.spline_order))
            .then(self.dropout.total_cmp(&other.dropout))
    }
}

impl GridAxes {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    /// The Cartesian product of all axes around the template.
    pub fn points(&self, spec: &ModelSpec, cfg: &TrainConfig) -> Result<Vec<GridPoint>> {
        fn axis<V: Clone>(name: &str, values: &Option<Vec<V>>, default: V) -> Result<Vec<V>> {
            match values {
                Some(v) if v.is_empty() => Err(Error::Config(format!("grid axis {name} has no values"))),
                Some(v) => Ok(v.clone()),
                None => Ok(vec![default]),
            }
        }
        let base = GridPoint::of(spec, cfg);
        let lr = axis("lr", &self.lr, base.lr)?;
        let hidden = axis("hidden_dim", &self.hidden_dim, base.hidden_dim)?;
        let depth = axis("stack_depth", &self.stack_depth, base.stack_depth)?;
        let grid = axis("grid_size", &self.grid_size, base.grid_size)?;
        let order = axis("spline_order", &self.spline_order, base.spline_order)?;
        let dropout = axis("dropout", &self.dropout, base.dropout)?;
        let mut out = Vec::new();
        for &lr in &lr {
            for &hidden_dim in &hidden {
                for &stack_depth in &depth {
                    for &grid_size in &grid {
                        for &spline_order in &order {
                            for &dropout in &dropout {
                                out.push(GridPoint {
                                    lr,
                                    hidden_dim,
                                    stack_depth,
                                    grid_size,
                                    spline_order,
                                    dropout,
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridTrial {
    pub point: GridPoint,
    /// Best validation loss, averaged over the splits.
    pub val_loss: f64,
    pub param_count: usize,
}

/// Picks the trial with the lowest validation loss; ties go to fewer
/// parameters, then to the lexicographically smaller point.
pub fn select_best(trials: &[GridTrial]) -> Option<&GridTrial> {
    trials.iter().min_by(|a, b| {
        a.val_loss
            .total_cmp(&b.val_loss)
            .then(a.param_count.cmp(&b.param_count))
            .then(a.point.lexicographic(&b.point))
    })
}

/// Exhaustive search: every point is trained once per split from
/// `cfg.seed`, and the selected point is retrained `cfg.repeats` times on
/// the first split for the reported test metric.
pub fn grid_search<T: Scalar>(
    template: &ModelSpec,
    axes: &GridAxes,
    ds: &Dataset,
    splits: &[DataSplit],
    cfg: &TrainConfig,
) -> Result<(GridPoint, RunReport)> {
    let (point, report, _) = grid_search_with_model::<T>(template, axes, ds, splits, cfg)?;
    Ok((point, report))
}

/// [`grid_search`], also returning the first retrained model of the
/// selected point.
pub fn grid_search_with_model<T: Scalar>(
    template: &ModelSpec,
    axes: &GridAxes,
    ds: &Dataset,
    splits: &[DataSplit],
    cfg: &TrainConfig,
) -> Result<(GridPoint, RunReport, Model<T>)> {
    let start = Instant::now();
    cfg.validate()?;
    if splits.is_empty() {
        return Err(Error::Config("grid search needs at least one split".into()));
    }
    let points = axes.points(template, cfg)?;
    let problems = splits
        .iter()
        .map(|s| Problem::<T>::new(ds, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let run_point = |point: &GridPoint| -> Result<GridTrial> {
        let (spec, cfg) = point.apply(template, cfg);
        let param_count = Model::<T>::new(spec.clone(), cfg.seed)?.num_params();
        let mut total = 0.0;
        for p in &problems {
            total += train_run(&spec, p, &cfg, cfg.seed)?.1.best_val_loss;
        }
        Ok(GridTrial {
            point: point.clone(),
            val_loss: total / problems.len() as f64,
            param_count,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))?;
    let trials = pool.install(|| points.par_iter().map(run_point).collect::<Result<Vec<_>>>())?;
    let best = select_best(&trials).expect("grid has at least one point").point.clone();
    let (spec, best_cfg) = best.apply(template, cfg);
    let (mut report, model) = train_problem(&spec, &ds.name, &problems[0], &best_cfg, start)?;
    report.grid = Some(trials);
    Ok((best, report, model))
}
