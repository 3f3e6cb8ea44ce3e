//! On-disk dataset formats.
//!
//! A node or link dataset is a directory holding `edges.csv` (`src,dst`
//! rows, 0-based), `features.csv` (one row per node), `labels.csv` (one
//! class per row; node tasks only) and optionally `splits.json` (a list
//! of `{"train": [..], "val": [..], "test": [..]}` folds).
//!
//! A graph dataset is a JSON-lines file with one object per graph:
//! `{"num_nodes": 3, "edges": [[0, 1], ...], "x": [[...], ...], "y": ...}`
//! where `y` is an integer class, a float, or a list of floats.
//!
//! Edge rows are directed arcs; missing reverse arcs are added and
//! counted in [`EdgeFixups`]. Writers emit both directions.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_fold, Dataset, EdgeFixups, Fold, Graph, Labels, Task};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    NodeTask,
    GraphTask,
    LinkTask,
}

pub fn load_dataset(path: &Path, kind: DatasetKind) -> Result<Dataset> {
    match kind {
        DatasetKind::NodeTask => load_node_dir(path, true),
        DatasetKind::LinkTask => load_node_dir(path, false),
        DatasetKind::GraphTask => load_graph_jsonl(path),
    }
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Rows of a header-less CSV file with their 1-based line numbers.
fn read_csv(path: &Path) -> Result<Vec<(u64, Vec<String>)>> {
    let file = File::open(path).map_err(|e| parse_err(path, 0, format!("cannot open: {e}")))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        rows.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(rows)
}

fn parse_usize(path: &Path, line: u64, s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| parse_err(path, line, format!("expected a non-negative integer, got {s:?}")))
}

fn parse_finite(path: &Path, line: u64, s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| parse_err(path, line, format!("expected a number, got {s:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value {s:?}")));
    }
    Ok(v)
}

fn load_node_dir(dir: &Path, with_labels: bool) -> Result<Dataset> {
    let fpath = dir.join("features.csv");
    let mut x = Vec::new();
    let mut width = None;
    for (line, row) in read_csv(&fpath)? {
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(parse_err(&fpath, line, format!(
                "row has {} values, expected {}",
                row.len(),
                width.unwrap_or(0)
            )));
        }
        for s in &row {
            x.push(parse_finite(&fpath, line, s)?);
        }
    }
    let d = width.ok_or_else(|| parse_err(&fpath, 0, "no feature rows"))?;
    let n = x.len() / d;

    let epath = dir.join("edges.csv");
    let mut arcs = Vec::new();
    for (line, row) in read_csv(&epath)? {
        if row.len() != 2 {
            return Err(parse_err(&epath, line, format!("expected `src,dst`, got {} fields", row.len())));
        }
        let (u, v) = (parse_usize(&epath, line, &row[0])?, parse_usize(&epath, line, &row[1])?);
        if u >= n || v >= n {
            return Err(parse_err(&epath, line, format!("node id out of range for {n} nodes")));
        }
        arcs.push((u, v));
    }
    let (mut g, fixups) = Graph::from_arcs(n, &arcs, x, d)?;

    let name = dir
        .file_name()
        .map_or_else(|| "dataset".to_owned(), |s| s.to_string_lossy().into_owned());
    let task = if with_labels {
        let lpath = dir.join("labels.csv");
        let rows = read_csv(&lpath)?;
        if rows.len() != n {
            return Err(parse_err(&lpath, rows.last().map_or(0, |r| r.0), format!(
                "{} labels for {n} nodes",
                rows.len()
            )));
        }
        let mut labels = Vec::with_capacity(n);
        for (line, row) in rows {
            if row.len() != 1 {
                return Err(parse_err(&lpath, line, "expected one label per row"));
            }
            labels.push(parse_usize(&lpath, line, &row[0])?);
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        g = g.with_labels(Labels::Node(labels))?;
        Task::NodeClassification { num_classes }
    } else {
        Task::LinkPrediction
    };
    let mut ds = Dataset::new(name, task, vec![g])?;
    ds.fixups = fixups;

    let spath = dir.join("splits.json");
    if with_labels && spath.exists() {
        let folds: Vec<Fold> = serde_json::from_reader(BufReader::new(File::open(&spath)?))
            .map_err(|e| parse_err(&spath, e.line() as u64, e.to_string()))?;
        for f in &folds {
            validate_fold(f, ds.num_samples())?;
        }
        ds.splits = Some(folds);
    }
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum TargetRecord {
    Class(u64),
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    x: Vec<Vec<f64>>,
    y: TargetRecord,
}

fn load_graph_jsonl(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path).map_err(|e| parse_err(path, 0, format!("cannot open: {e}")))?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GraphRecord = serde_json::from_str(&line)
            .map_err(|e| parse_err(path, line_no, e.to_string()))?;
        records.push((line_no, rec));
    }
    if records.is_empty() {
        return Err(parse_err(path, 0, "no graphs"));
    }
    let classification = records.iter().all(|(_, r)| matches!(r.y, TargetRecord::Class(_)));
    let mut fixups = EdgeFixups::default();
    let mut graphs = Vec::with_capacity(records.len());
    let mut width = None;
    let mut target_dim = None;
    for (line, rec) in records {
        let d = rec.x.first().map_or(0, Vec::len);
        if *width.get_or_insert(d) != d || rec.x.len() != rec.num_nodes || rec.x.iter().any(|r| r.len() != d) {
            return Err(parse_err(path, line, "feature rows disagree with num_nodes or the dataset width"));
        }
        if rec.x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(parse_err(path, line, "non-finite feature"));
        }
        if let Some(&[u, v]) = rec.edges.iter().find(|[u, v]| *u >= rec.num_nodes || *v >= rec.num_nodes) {
            return Err(parse_err(path, line, format!("edge ({u}, {v}) out of range")));
        }
        let arcs: Vec<_> = rec.edges.iter().map(|&[u, v]| (u, v)).collect();
        let x: Vec<f64> = rec.x.into_iter().flatten().collect();
        let (g, fx) = Graph::from_arcs(rec.num_nodes, &arcs, x, d).map_err(|e| parse_err(path, line, e.to_string()))?;
        fixups.merge(fx);
        let y = match rec.y {
            TargetRecord::Class(c) if classification => Labels::Class(c as usize),
            TargetRecord::Class(c) => Labels::Target(vec![c as f64]),
            TargetRecord::Scalar(v) => Labels::Target(vec![v]),
            TargetRecord::Vector(v) => Labels::Target(v),
        };
        if let Labels::Target(t) = &y {
            if *target_dim.get_or_insert(t.len()) != t.len() || t.iter().any(|v| !v.is_finite()) {
                return Err(parse_err(path, line, "target has the wrong length or is non-finite"));
            }
        }
        graphs.push(g.with_labels(y)?);
    }
    let task = if classification {
        let num_classes = graphs
            .iter()
            .filter_map(|g| match g.labels() {
                Some(Labels::Class(c)) => Some(c + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        Task::GraphClassification { num_classes }
    } else {
        Task::GraphRegression {
            target_dim: target_dim.unwrap_or(0),
        }
    };
    let name = path
        .file_stem()
        .map_or_else(|| "dataset".to_owned(), |s| s.to_string_lossy().into_owned());
    let mut ds = Dataset::new(name, task, graphs)?;
    ds.fixups = fixups;
    Ok(ds)
}

fn all_arcs(g: &Graph) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..g.num_nodes()).flat_map(move |u| g.neighbors(u).iter().map(move |&v| (u, v)))
}

/// Writes a node or link dataset directory.
pub fn save_node_dir(ds: &Dataset, dir: &Path) -> Result<()> {
    if !matches!(ds.task, Task::NodeClassification { .. } | Task::LinkPrediction) {
        return Err(Error::Data("only node and link datasets are stored as directories".into()));
    }
    fs::create_dir_all(dir)?;
    let g = &ds.graphs[0];
    let mut w = csv::Writer::from_path(dir.join("edges.csv")).map_err(csv_err(dir))?;
    for (u, v) in all_arcs(g) {
        w.write_record([u.to_string(), v.to_string()]).map_err(csv_err(dir))?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("features.csv")).map_err(csv_err(dir))?;
    for v in 0..g.num_nodes() {
        w.write_record(g.feature_row(v).iter().map(|f| format!("{f:?}"))).map_err(csv_err(dir))?;
    }
    w.flush()?;
    if let Some(Labels::Node(l)) = g.labels().filter(|_| matches!(ds.task, Task::NodeClassification { .. })) {
        let mut w = csv::Writer::from_path(dir.join("labels.csv")).map_err(csv_err(dir))?;
        for c in l {
            w.write_record([c.to_string()]).map_err(csv_err(dir))?;
        }
        w.flush()?;
    }
    if let Some(splits) = &ds.splits {
        fs::write(dir.join("splits.json"), serde_json::to_string(splits)?)?;
    }
    Ok(())
}

fn csv_err(dir: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| parse_err(dir, e.position().map_or(0, |p| p.line()), e.to_string())
}

/// Writes a graph dataset as JSON lines.
pub fn save_graph_jsonl(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for g in &ds.graphs {
        let y = match g.labels() {
            Some(Labels::Class(c)) => TargetRecord::Class(*c as u64),
            Some(Labels::Target(t)) if t.len() == 1 => TargetRecord::Scalar(t[0]),
            Some(Labels::Target(t)) => TargetRecord::Vector(t.clone()),
            _ => return Err(Error::Data("graph dataset entries need graph-level labels".into())),
        };
        let rec = GraphRecord {
            num_nodes: g.num_nodes(),
            edges: all_arcs(g).map(|(u, v)| [u, v]).collect(),
            x: (0..g.num_nodes()).map(|v| g.feature_row(v).to_vec()).collect(),
            y,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a dataset in whichever format its task uses.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    match ds.task {
        Task::GraphClassification { .. } | Task::GraphRegression { .. } => save_graph_jsonl(ds, path),
        _ => save_node_dir(ds, path),
    }
}
