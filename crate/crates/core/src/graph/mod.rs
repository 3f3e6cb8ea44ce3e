//! Undirected graphs in CSR form, batching, datasets and splits.

mod batch;
pub mod io;
mod link;
mod norm;
mod split;
pub mod synth;

pub use batch::{make_batch, GraphBatch};
pub use link::{lp_edge_split, LinkSplit};
pub use norm::{attention_edges, gcn_norm_coefficients, neighbor_sum};
pub use split::{holdout_split, make_splits, validate_fold, Fold, SplitPlan};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supervision attached to a graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Labels {
    /// One class per node.
    Node(Vec<usize>),
    /// One class for the whole graph.
    Class(usize),
    /// A real-valued target vector for the whole graph.
    Target(Vec<f64>),
}

/// Corrections applied while building a graph from a raw arc list.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeFixups {
    /// Arcs whose reverse was missing and had to be added.
    pub symmetrized: usize,
    pub duplicates: usize,
    pub self_loops: usize,
}

impl EdgeFixups {
    pub fn total(&self) -> usize {
        self.symmetrized + self.duplicates + self.self_loops
    }

    pub fn merge(&mut self, other: EdgeFixups) {
        self.symmetrized += other.symmetrized;
        self.duplicates += other.duplicates;
        self.self_loops += other.self_loops;
    }
}

/// Undirected simple graph: every edge is stored in both directions,
/// neighbor lists are sorted, and there are no self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    x: Vec<f64>,
    feat_dim: usize,
    y: Option<Labels>,
}

impl Graph {
    /// Builds from directed arcs, adding missing reverses and dropping
    /// duplicates and self-loops; the corrections are counted.
    pub fn from_arcs(
        n: usize,
        arcs: &[(usize, usize)],
        x: Vec<f64>,
        feat_dim: usize,
    ) -> Result<(Self, EdgeFixups)> {
        check_features(n, &x, feat_dim)?;
        let mut fixups = EdgeFixups::default();
        let mut directed = Vec::with_capacity(arcs.len());
        for &(u, v) in arcs {
            if u >= n || v >= n {
                return Err(Error::Data(format!("edge ({u}, {v}) in a graph of {n} nodes")));
            }
            if u == v {
                fixups.self_loops += 1;
            } else {
                directed.push((u, v));
            }
        }
        directed.sort_unstable();
        let before = directed.len();
        directed.dedup();
        fixups.duplicates = before - directed.len();
        let mut all = directed.clone();
        for &(u, v) in &directed {
            if directed.binary_search(&(v, u)).is_err() {
                fixups.symmetrized += 1;
                all.push((v, u));
            }
        }
        all.sort_unstable();
        let mut offsets = vec![0; n + 1];
        for &(u, _) in &all {
            offsets[u + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let targets = all.into_iter().map(|(_, v)| v).collect();
        let g = Self {
            n,
            offsets,
            targets,
            x,
            feat_dim,
            y: None,
        };
        Ok((g, fixups))
    }

    /// Builds from undirected edges listed once (either orientation).
    pub fn from_edges(n: usize, edges: &[(usize, usize)], x: Vec<f64>, feat_dim: usize) -> Result<Self> {
        let arcs: Vec<_> = edges.iter().flat_map(|&(u, v)| [(u, v), (v, u)]).collect();
        Ok(Self::from_arcs(n, &arcs, x, feat_dim)?.0)
    }

    /// Builds from raw CSR arrays, checking every structural invariant.
    pub fn from_csr(
        n: usize,
        offsets: Vec<usize>,
        targets: Vec<usize>,
        x: Vec<f64>,
        feat_dim: usize,
    ) -> Result<Self> {
        check_features(n, &x, feat_dim)?;
        let g = Self {
            n,
            offsets,
            targets,
            x,
            feat_dim,
            y: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_labels(mut self, y: Labels) -> Result<Self> {
        if let Labels::Node(l) = &y {
            if l.len() != self.n {
                return Err(Error::Data(format!(
                    "{} node labels for {} nodes",
                    l.len(),
                    self.n
                )));
            }
        }
        self.y = Some(y);
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.y = None;
        self
    }

    /// Checks offsets, bounds, sortedness, symmetry and loop-freedom.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Data(format!("invalid graph: {m}")));
        if self.offsets.len() != self.n + 1
            || self.offsets[0] != 0
            || self.offsets[self.n] != self.targets.len()
            || self.offsets.windows(2).any(|w| w[0] > w[1])
        {
            return bad("offsets");
        }
        for v in 0..self.n {
            let nb = self.neighbors(v);
            if nb.iter().any(|&u| u >= self.n || u == v) {
                return bad("neighbor out of range or self-loop");
            }
            if nb.windows(2).any(|w| w[0] >= w[1]) {
                return bad("unsorted or duplicate neighbors");
            }
            if nb.iter().any(|&u| self.neighbors(u).binary_search(&v).is_err()) {
                return bad("asymmetric adjacency");
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    /// Undirected edge count.
    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|u| self.neighbors(u).iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
            .collect()
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    /// Row-major `n × feat_dim` features.
    pub fn features(&self) -> &[f64] {
        &self.x
    }

    pub fn feature_row(&self, v: usize) -> &[f64] {
        &self.x[v * self.feat_dim..(v + 1) * self.feat_dim]
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.y.as_ref()
    }

    /// Relabels node `v` as `perm[v]`, carrying features and node labels.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.n];
        if perm.len() != self.n || perm.iter().any(|&p| p >= self.n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Data("not a permutation of the node set".into()));
        }
        let edges: Vec<_> = self.edges().into_iter().map(|(u, v)| (perm[u], perm[v])).collect();
        let mut x = vec![0.0; self.x.len()];
        for v in 0..self.n {
            let p = perm[v];
            x[p * self.feat_dim..(p + 1) * self.feat_dim].copy_from_slice(self.feature_row(v));
        }
        let g = Self::from_edges(self.n, &edges, x, self.feat_dim)?;
        let y = match &self.y {
            Some(Labels::Node(l)) => {
                let mut out = vec![0; self.n];
                for (v, &c) in l.iter().enumerate() {
                    out[perm[v]] = c;
                }
                Some(Labels::Node(out))
            }
            other => other.clone(),
        };
        Ok(Self { y, ..g })
    }

    /// Same structure and labels with different features.
    pub fn with_features(&self, x: Vec<f64>, feat_dim: usize) -> Result<Self> {
        check_features(self.n, &x, feat_dim)?;
        Ok(Self {
            x,
            feat_dim,
            ..self.clone()
        })
    }
}

fn check_features(n: usize, x: &[f64], feat_dim: usize) -> Result<()> {
    if feat_dim == 0 || x.len() != n * feat_dim {
        return Err(Error::Data(format!(
            "{} feature values for {n} nodes of width {feat_dim}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite node feature".into()));
    }
    Ok(())
}

/// What a dataset asks the model to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    NodeClassification { num_classes: usize },
    GraphClassification { num_classes: usize },
    GraphRegression { target_dim: usize },
    LinkPrediction,
}

/// A node or link task (one graph) or a graph task (many graphs).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub task: Task,
    pub graphs: Vec<Graph>,
    /// Splits shipped with the data, if any.
    pub splits: Option<Vec<Fold>>,
    pub fixups: EdgeFixups,
}

impl Dataset {
    /// Checks that the labels agree with the task and the graphs agree
    /// with each other.
    pub fn new(name: impl Into<String>, task: Task, graphs: Vec<Graph>) -> Result<Self> {
        let name = name.into();
        let first = graphs
            .first()
            .ok_or_else(|| Error::Data(format!("dataset {name} has no graphs")))?;
        let d = first.feat_dim();
        if graphs.iter().any(|g| g.feat_dim() != d) {
            return Err(Error::Data(format!("dataset {name} mixes feature widths")));
        }
        let single = matches!(task, Task::NodeClassification { .. } | Task::LinkPrediction);
        if single && graphs.len() != 1 {
            return Err(Error::Data(format!(
                "{task:?} needs exactly one graph, got {}",
                graphs.len()
            )));
        }
        for g in &graphs {
            let ok = match (task, g.labels()) {
                (Task::NodeClassification { num_classes }, Some(Labels::Node(l))) => {
                    l.iter().all(|&c| c < num_classes)
                }
                (Task::GraphClassification { num_classes }, Some(Labels::Class(c))) => *c < num_classes,
                (Task::GraphRegression { target_dim }, Some(Labels::Target(t))) => {
                    t.len() == target_dim && t.iter().all(|v| v.is_finite())
                }
                (Task::LinkPrediction, _) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::Data(format!(
                    "labels of dataset {name} do not fit task {task:?}"
                )));
            }
        }
        Ok(Self {
            name,
            task,
            graphs,
            splits: None,
            fixups: EdgeFixups::default(),
        })
    }

    pub fn feat_dim(&self) -> usize {
        self.graphs[0].feat_dim()
    }

    /// Width of the prediction head.
    pub fn out_dim(&self) -> usize {
        match self.task {
            Task::NodeClassification { num_classes } | Task::GraphClassification { num_classes } => {
                num_classes
            }
            Task::GraphRegression { target_dim } => target_dim,
            Task::LinkPrediction => 0,
        }
    }

    /// Nodes for node tasks, graphs for graph tasks, edges for link tasks.
    pub fn num_samples(&self) -> usize {
        match self.task {
            Task::NodeClassification { .. } => self.graphs[0].num_nodes(),
            Task::LinkPrediction => self.graphs[0].num_edges(),
            _ => self.graphs.len(),
        }
    }

    /// Class of each sample, used to stratify splits.
    pub fn strata(&self) -> Option<Vec<usize>> {
        match self.task {
            Task::NodeClassification { .. } => match self.graphs[0].labels() {
                Some(Labels::Node(l)) => Some(l.clone()),
                _ => None,
            },
            Task::GraphClassification { .. } => self
                .graphs
                .iter()
                .map(|g| match g.labels() {
                    Some(Labels::Class(c)) => Some(*c),
                    _ => None,
                })
                .collect(),
            _ => None,
        }
    }
}
