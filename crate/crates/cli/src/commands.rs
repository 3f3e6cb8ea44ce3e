use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use kagnn::gnn::{Model, ModelSpec};
use kagnn::graph::io::load_dataset;
use kagnn::graph::synth::synth_dataset;
use kagnn::graph::Dataset;
use kagnn::train::{
    default_split, evaluate, grid_search_with_model, gradcheck_suite, load_checkpoint, save_checkpoint, splits_for,
    time_epochs, train_with_model, Evaluation, LossKind, MetricKind, Phase, Problem, RunReport,
};
use kagnn::{Error, Result, Scalar};

use crate::config::{infer_kind, parse_model_label, Precision, Settings};

/// Raised when the gradient suite finds a mismatch.
pub struct GradcheckFailed;

pub fn load_data(s: &Settings) -> Result<Dataset> {
    match (&s.data, s.synth) {
        (Some(_), Some(_)) => Err(Error::Config("--data and --synth cannot both be given".into())),
        (Some(path), None) => load_dataset(path, s.kind.unwrap_or_else(|| infer_kind(path))),
        (None, Some(kind)) => synth_dataset(kind, s.data_seed.unwrap_or(0)),
        (None, None) => Err(Error::Config("no dataset: pass --data <path> or --synth <name>".into())),
    }
}

fn fitted_spec(s: &Settings, ds: &Dataset) -> Result<ModelSpec> {
    let mut spec = s.model_spec();
    spec.fit_to(ds);
    spec.validate()?;
    Ok(spec)
}

fn output(s: &Settings, default: &str) -> PathBuf {
    s.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn describe(r: &RunReport) -> String {
    let std = r.test_std.map_or(String::new(), |s| format!(" ± {s:.4}"));
    format!(
        "{} on {}: {} params, test {:?} {:.4}{std}, seeds {:?}",
        r.model.label(),
        r.dataset,
        r.param_count,
        r.metric,
        r.test_mean,
        r.seeds
    )
}

pub fn train(s: &Settings) -> Result<()> {
    s.check_lists()?;
    let ds = load_data(s)?;
    let spec = fitted_spec(s, &ds)?;
    let cfg = s.train_config();
    cfg.validate()?;
    match s.precision() {
        Precision::F32 => train_as::<f32>(s, &ds, &spec),
        Precision::F64 => train_as::<f64>(s, &ds, &spec),
    }
}

fn train_as<T: Scalar>(s: &Settings, ds: &Dataset, spec: &ModelSpec) -> Result<()> {
    let cfg = s.train_config();
    let axes = s.grid_axes();
    let n_splits = s.splits.unwrap_or(1);
    let (report, model) = if axes.is_empty() && n_splits == 1 {
        let split = default_split(ds, cfg.seed)?;
        train_with_model::<T>(spec, ds, &split, &cfg)?
    } else {
        let splits = splits_for(ds, n_splits, cfg.seed)?;
        let (_, report, model) = grid_search_with_model::<T>(spec, &axes, ds, &splits, &cfg)?;
        (report, model)
    };
    let out = output(s, "report.json");
    report.save_json(&out)?;
    if let Some(path) = &s.curves {
        report.save_curves_csv(path)?;
    }
    if let Some(path) = &s.checkpoint {
        save_checkpoint(&model, path)?;
    }
    println!("{}", describe(&report));
    println!("report written to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct PhaseScore {
    loss: f64,
    metric: f64,
}

impl From<Evaluation> for PhaseScore {
    fn from(e: Evaluation) -> Self {
        Self {
            loss: e.loss,
            metric: e.metric,
        }
    }
}

#[derive(Serialize)]
struct EvalReport {
    dataset: String,
    model: ModelSpec,
    checkpoint: PathBuf,
    seed: u64,
    loss: LossKind,
    metric: MetricKind,
    param_count: usize,
    train: PhaseScore,
    val: PhaseScore,
    test: PhaseScore,
}

pub fn eval(s: &Settings) -> Result<()> {
    let path = s
        .checkpoint
        .clone()
        .ok_or_else(|| Error::Config("eval needs --checkpoint <file>".into()))?;
    let ds = load_data(s)?;
    match s.precision() {
        Precision::F32 => eval_as::<f32>(s, &ds, &path),
        Precision::F64 => eval_as::<f64>(s, &ds, &path),
    }
}

fn eval_as<T: Scalar>(s: &Settings, ds: &Dataset, path: &Path) -> Result<()> {
    let model: Model<T> = load_checkpoint(path)?;
    let mut expected = model.spec().clone();
    expected.fit_to(ds);
    if &expected != model.spec() {
        return Err(Error::Data(format!(
            "checkpoint {} was trained for a different task or feature width than {}",
            path.display(),
            ds.name
        )));
    }
    let cfg = s.train_config();
    let split = default_split(ds, cfg.seed)?;
    let problem = Problem::<T>::new(ds, &split, &cfg)?;
    let report = EvalReport {
        dataset: ds.name.clone(),
        model: model.spec().clone(),
        checkpoint: path.to_path_buf(),
        seed: cfg.seed,
        loss: problem.loss_kind(),
        metric: problem.metric_kind(),
        param_count: model.num_params(),
        train: evaluate(&model, &problem, Phase::Train)?.into(),
        val: evaluate(&model, &problem, Phase::Val)?.into(),
        test: evaluate(&model, &problem, Phase::Test)?.into(),
    };
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(out) = &s.out {
        fs::write(out, json)?;
    }
    Ok(())
}

const BENCH_HEADER: [&str; 10] = [
    "dataset",
    "model",
    "hidden_dim",
    "num_layers",
    "grid_size",
    "spline_order",
    "param_count",
    "s_per_epoch",
    "test_metric",
    "metric",
];

pub fn bench(s: &Settings) -> Result<()> {
    s.check_lists()?;
    let labels = s.models.clone().unwrap_or_default();
    if labels.is_empty() {
        return Err(Error::Config("bench needs at least one model in --models".into()));
    }
    let models = labels
        .iter()
        .map(|l| parse_model_label(l))
        .collect::<Result<Vec<_>>>()?;
    let timed = s.timed_epochs.unwrap_or(20);
    let ds = load_data(s)?;
    let out = output(s, "bench.csv");
    let existing = if s.append.unwrap_or(false) {
        read_table(&out)?
    } else {
        Vec::new()
    };
    let mut rows = Vec::new();
    for (label, (layer, basis)) in labels.iter().zip(models) {
        let spec = fitted_spec(&Settings { layer: Some(layer), basis: Some(basis), ..s.clone() }, &ds)?;
        let row = match s.precision() {
            Precision::F32 => bench_row::<f32>(s, &ds, &spec, timed)?,
            Precision::F64 => bench_row::<f64>(s, &ds, &spec, timed)?,
        };
        println!("{label}: {} params, {} s/epoch, test {}", row[6], row[7], row[8]);
        rows.push(row);
    }
    write_table(&out, existing.into_iter().chain(rows))?;
    println!("table written to {}", out.display());
    Ok(())
}

fn bench_row<T: Scalar>(s: &Settings, ds: &Dataset, spec: &ModelSpec, timed: usize) -> Result<Vec<String>> {
    let cfg = s.train_config();
    let split = default_split(ds, cfg.seed)?;
    let problem = Problem::<T>::new(ds, &split, &cfg)?;
    let secs = time_epochs(spec, &problem, &cfg, timed, true)?;
    let (report, _) = train_with_model::<T>(spec, ds, &split, &cfg)?;
    Ok(vec![
        ds.name.clone(),
        spec.label(),
        spec.hidden_dim.to_string(),
        spec.num_layers.to_string(),
        spec.grid_size.to_string(),
        spec.spline_order.to_string(),
        report.param_count.to_string(),
        format!("{secs:.6}"),
        format!("{:.6}", report.test_mean),
        format!("{:?}", report.metric).to_lowercase(),
    ])
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// Rows of an existing bench table; a missing file is an empty table.
fn read_table(path: &Path) -> Result<Vec<Vec<String>>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = rd.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_owned).collect();
    if header != BENCH_HEADER {
        return Err(Error::Data(format!(
            "{} is not a bench table (columns {header:?}); refusing to append",
            path.display()
        )));
    }
    rd.records()
        .map(|r| Ok(r.map_err(|e| csv_err(path, e))?.iter().map(str::to_owned).collect()))
        .collect()
}

/// Writes the whole table beside `path` and renames it into place, so an
/// interrupted run leaves the old file intact.
fn write_table(path: &Path, rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut wr = csv::Writer::from_path(&tmp).map_err(|e| csv_err(&tmp, e))?;
        wr.write_record(BENCH_HEADER).map_err(|e| csv_err(&tmp, e))?;
        for row in rows {
            wr.write_record(&row).map_err(|e| csv_err(&tmp, e))?;
        }
        wr.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn gradcheck(s: &Settings) -> Result<std::result::Result<(), GradcheckFailed>> {
    let suite = gradcheck_suite(s.seed())?;
    println!("{:<12} {:>7} {:>12} {:>12}  result", "config", "params", "max rel err", "max abs err");
    for r in &suite.rows {
        println!(
            "{:<12} {:>7} {:>12.3e} {:>12.3e}  {}",
            r.name,
            r.num_params,
            r.max_rel_err,
            r.max_abs_err,
            if r.passed { "pass" } else { "FAIL" }
        );
        if let (false, Some(w)) = (r.passed, &r.worst) {
            println!("    worst: {w:?}");
        }
    }
    if let Some(out) = &s.out {
        fs::write(out, serde_json::to_string_pretty(&suite)?)?;
    }
    Ok(if suite.passed() { Ok(()) } else { Err(GradcheckFailed) })
}
