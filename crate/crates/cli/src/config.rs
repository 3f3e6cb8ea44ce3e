//! Flat run configuration shared by the JSON config file and the flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};

use kagnn::gnn::{BasisKind, LayerKind, ModelSpec, Pooling};
use kagnn::graph::io::DatasetKind;
use kagnn::graph::synth::SynthSpec;
use kagnn::train::{GridAxes, TrainConfig};
use kagnn::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

fn enum_arg<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn one_or_many<'de, D, T>(d: D) -> std::result::Result<Option<Vec<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(Option::<OneOrMany<T>>::deserialize(d)?.map(|v| match v {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(xs) => xs,
    }))
}

/// Every setting a command reads. In the JSON file each key is the flag
/// name with underscores; flags given on the command line win. Keys marked
/// "list" take one value or several (comma separated on the command
/// line); several values turn `train` into a grid search.
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Dataset directory (node/link tasks) or JSON-lines file (graph tasks).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,

    /// Task of `--data` [default: inferred from the path].
    #[arg(long, value_parser = enum_arg::<DatasetKind>)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<DatasetKind>,

    /// Synthetic dataset instead of `--data`: sbm_node, cycles_vs_paths,
    /// degree_regression or lp_graph.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,

    /// Seed of the synthetic generator [default: 0].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,

    /// gcn, gin, gat, kagcn, kagin or kagat [default: gin].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer: Option<LayerKind>,

    /// KAN basis: bspline or rbf [default: bspline].
    #[arg(long, value_parser = enum_arg::<BasisKind>)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basis: Option<BasisKind>,

    /// Message-passing layers [default: 2].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_layers: Option<usize>,

    /// Hidden width, list [default: 16].
    #[arg(long, value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many", skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<Vec<usize>>,

    /// Layers inside each MLP/KAN transform, list [default: 2].
    #[arg(long, value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many", skip_serializing_if = "Option::is_none")]
    pub stack_depth: Option<Vec<usize>>,

    /// B-spline intervals or RBF centers, list [default: 4].
    #[arg(long, value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many", skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<Vec<usize>>,

    /// B-spline order, list [default: 3].
    #[arg(long, value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many", skip_serializing_if = "Option::is_none")]
    pub spline_order: Option<Vec<usize>>,

    /// Attention heads [default: 4].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,

    /// Dropout after each message-passing layer, list [default: 0].
    #[arg(long, value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many", skip_serializing_if = "Option::is_none")]
    pub dropout: Option<Vec<f64>>,

    /// Batch norm after each message-passing layer [default: true].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_norm: Option<bool>,

    /// Graph readout: sum or mean [default: mean for gcn kinds, else sum].
    #[arg(long, value_parser = enum_arg::<Pooling>)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pooling: Option<Pooling>,

    /// Layers of the output head [default: stack depth].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_layers: Option<usize>,

    /// SiLU base path on KAN edges [default: true].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_path: Option<bool>,

    /// Maximum training epochs [default: 200].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,

    /// Early-stopping patience in epochs [default: 20].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,

    /// Adam learning rate, list [default: 0.01].
    #[arg(long, value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many", skip_serializing_if = "Option::is_none")]
    pub lr: Option<Vec<f64>>,

    /// Graphs per minibatch for graph tasks [default: 128].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,

    /// Seed of model initialization, dropout and shuffling [default: 0].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    /// Training runs with seeds seed, seed+1, ... [default: 1].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,

    /// Splits averaged per grid-search point [default: 1].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub splits: Option<usize>,

    /// Floating-point precision [default: f64].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<Precision>,

    /// Output file: JSON report (train, eval) or CSV table (bench)
    /// [default: report.json, or bench.csv for bench].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,

    /// CSV file for per-epoch loss curves (train).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curves: Option<PathBuf>,

    /// Model checkpoint: written by train, read by eval.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,

    /// Models to benchmark, e.g. gin,rbf-kagin,bs-kagin.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many", skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<String>>,

    /// Timed epochs per benchmarked model [default: 20].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timed_epochs: Option<usize>,

    /// Append bench rows to an existing table instead of replacing it.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub append: Option<bool>,
}

impl Settings {
    /// Reads a JSON config file; unknown keys are rejected.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read --config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid --config {}: {e}", path.display())))
    }

    /// `self` with every value set in `flags` replaced.
    pub fn overridden_by(&self, flags: &Settings) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        let top = serde_json::to_value(flags)?;
        if let (Some(b), serde_json::Value::Object(t)) = (base.as_object_mut(), top) {
            b.extend(t);
        }
        Ok(serde_json::from_value(base)?)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn precision(&self) -> Precision {
        self.precision.unwrap_or_default()
    }

    /// The model template; list-valued fields contribute their first value.
    pub fn model_spec(&self) -> ModelSpec {
        let d = ModelSpec::default();
        let first = |v: &Option<Vec<usize>>, dflt: usize| v.as_ref().and_then(|v| v.first().copied()).unwrap_or(dflt);
        ModelSpec {
            layer: self.layer.unwrap_or(d.layer),
            basis: self.basis.unwrap_or(d.basis),
            num_layers: self.num_layers.unwrap_or(d.num_layers),
            hidden_dim: first(&self.hidden_dim, d.hidden_dim),
            stack_depth: first(&self.stack_depth, d.stack_depth),
            grid_size: first(&self.grid_size, d.grid_size),
            spline_order: first(&self.spline_order, d.spline_order),
            heads: self.heads.unwrap_or(d.heads),
            dropout: self.dropout.as_ref().and_then(|v| v.first().copied()).unwrap_or(d.dropout),
            batch_norm: self.batch_norm.unwrap_or(d.batch_norm),
            pooling: self.pooling.or(d.pooling),
            head_layers: self.head_layers.or(d.head_layers),
            base_path: self.base_path.unwrap_or(d.base_path),
            ..d
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            max_epochs: self.epochs.unwrap_or(d.max_epochs),
            patience: self.patience.unwrap_or(d.patience),
            lr: self.lr.as_ref().and_then(|v| v.first().copied()).unwrap_or(d.lr),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            seed: self.seed(),
            repeats: self.repeats.unwrap_or(d.repeats),
            ..d
        }
    }

    /// Search axes for every list field holding more than one value.
    pub fn grid_axes(&self) -> GridAxes {
        fn multi<V: Clone>(v: &Option<Vec<V>>) -> Option<Vec<V>> {
            v.as_ref().filter(|v| v.len() > 1).cloned()
        }
        GridAxes {
            lr: multi(&self.lr),
            hidden_dim: multi(&self.hidden_dim),
            stack_depth: multi(&self.stack_depth),
            grid_size: multi(&self.grid_size),
            spline_order: multi(&self.spline_order),
            dropout: multi(&self.dropout),
        }
    }

    /// Rejects list fields given as an empty list.
    pub fn check_lists(&self) -> Result<()> {
        let empty = [
            ("hidden_dim", self.hidden_dim.as_ref().map(Vec::len)),
            ("stack_depth", self.stack_depth.as_ref().map(Vec::len)),
            ("grid_size", self.grid_size.as_ref().map(Vec::len)),
            ("spline_order", self.spline_order.as_ref().map(Vec::len)),
            ("dropout", self.dropout.as_ref().map(Vec::len)),
            ("lr", self.lr.as_ref().map(Vec::len)),
        ];
        for (name, len) in empty {
            if len == Some(0) {
                return Err(Error::Config(format!("--{} needs at least one value", name.replace('_', "-"))));
            }
        }
        Ok(())
    }
}

/// Parses a bench model label: `gcn`, `gin`, `gat`, `kagin` (B-spline),
/// or a basis-prefixed KAN kind such as `bs-kagcn` or `rbf-kagat`.
pub fn parse_model_label(label: &str) -> Result<(LayerKind, BasisKind)> {
    let (basis, kind) = match label.split_once('-') {
        Some(("bs", k)) => (Some(BasisKind::Bspline), k),
        Some(("rbf", k)) => (Some(BasisKind::Rbf), k),
        Some(_) => return Err(Error::Config(format!("--models: unknown model {label:?}"))),
        None => (None, label),
    };
    let layer: LayerKind = kind
        .parse()
        .map_err(|_| Error::Config(format!("--models: unknown model {label:?}")))?;
    match (layer.is_kan(), basis) {
        (false, Some(_)) => Err(Error::Config(format!("--models: {kind} takes no basis prefix"))),
        (_, b) => Ok((layer, b.unwrap_or(BasisKind::Bspline))),
    }
}

/// `DatasetKind` of a dataset path: a directory with labels is a node
/// task, one without is a link task, a file holds graphs.
pub fn infer_kind(path: &Path) -> DatasetKind {
    if path.is_dir() {
        if path.join("labels.csv").exists() {
            DatasetKind::NodeTask
        } else {
            DatasetKind::LinkTask
        }
    } else {
        DatasetKind::GraphTask
    }
}
