//! Seeded synthetic datasets.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Graph, Labels, Task};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthSpec {
    SbmNode,
    CyclesVsPaths,
    DegreeRegression,
    LpGraph,
}

impl SynthSpec {
    pub const ALL: [SynthSpec; 4] = [
        Self::SbmNode,
        Self::CyclesVsPaths,
        Self::DegreeRegression,
        Self::LpGraph,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::SbmNode => "sbm_node",
            Self::CyclesVsPaths => "cycles_vs_paths",
            Self::DegreeRegression => "degree_regression",
            Self::LpGraph => "lp_graph",
        }
    }
}

impl fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown synthetic dataset {s:?}; known: {}", known.join(", ")))
            })
    }
}

/// Builds a dataset at its default size.
pub fn synth_dataset(spec: SynthSpec, seed: u64) -> Result<Dataset> {
    match spec {
        SynthSpec::SbmNode => sbm_node(40, 0.9, 0.05, seed),
        SynthSpec::CyclesVsPaths => cycles_vs_paths(120, seed),
        SynthSpec::DegreeRegression => degree_regression(120, seed),
        SynthSpec::LpGraph => lp_graph(200, seed),
    }
}

fn sbm_edges(blocks: &[usize], p_in: f64, p_out: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let n = blocks.len();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if blocks[u] == blocks[v] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

/// Node features: a shared Gaussian centroid per block plus unit noise.
fn block_features(blocks: &[usize], num_blocks: usize, dim: usize, spread: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let centroids: Vec<f64> = (0..num_blocks * dim).map(|_| spread * normal.sample(rng)).collect();
    blocks
        .iter()
        .flat_map(|&b| {
            (0..dim)
                .map(|j| centroids[b * dim + j] + normal.sample(rng))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Two-block stochastic block model; node label = block. Blocks are
/// interleaved (node `v` is in block `v % 2`) and features are noisy
/// 8-dimensional block centroids.
pub fn sbm_node(n: usize, p_in: f64, p_out: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Config(format!("sbm_node needs at least 2 nodes, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks: Vec<usize> = (0..n).map(|v| v % 2).collect();
    let edges = sbm_edges(&blocks, p_in, p_out, &mut rng);
    let x = block_features(&blocks, 2, 8, 0.5, &mut rng);
    let g = Graph::from_edges(n, &edges, x, 8)?.with_labels(Labels::Node(blocks))?;
    Dataset::new("sbm_node", Task::NodeClassification { num_classes: 2 }, vec![g])
}

/// Cycles (label 1) and paths (label 0) on 4–12 nodes with constant
/// features; labels alternate, so any even count is exactly balanced.
pub fn cycles_vs_paths(num_graphs: usize, seed: u64) -> Result<Dataset> {
    if num_graphs == 0 {
        return Err(Error::Config("cycles_vs_paths needs at least one graph".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs = (0..num_graphs)
        .map(|i| {
            let n = rng.random_range(4..=12);
            let cycle = i % 2 == 1;
            let mut edges: Vec<_> = (0..n - 1).map(|v| (v, v + 1)).collect();
            if cycle {
                edges.push((n - 1, 0));
            }
            Graph::from_edges(n, &edges, vec![1.0; n], 1)?.with_labels(Labels::Class(usize::from(cycle)))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new("cycles_vs_paths", Task::GraphClassification { num_classes: 2 }, graphs)
}

/// Erdős–Rényi graphs on 5–15 nodes with edge probability in
/// `[0.1, 0.5]`. Features are `[1, u]` with `u ~ U(-1, 1)`; the target is
/// the mean degree plus `sin` of the mean of `u`.
pub fn degree_regression(num_graphs: usize, seed: u64) -> Result<Dataset> {
    if num_graphs == 0 {
        return Err(Error::Config("degree_regression needs at least one graph".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs = (0..num_graphs)
        .map(|_| {
            let n = rng.random_range(5..=15);
            let p = rng.random_range(0.1..=0.5);
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random::<f64>() < p {
                        edges.push((u, v));
                    }
                }
            }
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x: Vec<f64> = u.iter().flat_map(|&ui| [1.0, ui]).collect();
            let mean_degree = 2.0 * edges.len() as f64 / n as f64;
            let mean_u = u.iter().sum::<f64>() / n as f64;
            Graph::from_edges(n, &edges, x, 2)?
                .with_labels(Labels::Target(vec![mean_degree + mean_u.sin()]))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new("degree_regression", Task::GraphRegression { target_dim: 1 }, graphs)
}

/// Four-block SBM for link prediction (intra 0.15, inter 0.002) with noisy
/// 16-dimensional block features.
pub fn lp_graph(n: usize, seed: u64) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::Config(format!("lp_graph needs at least 4 nodes, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks: Vec<usize> = (0..n).map(|v| v % 4).collect();
    let edges = sbm_edges(&blocks, 0.15, 0.002, &mut rng);
    let x = block_features(&blocks, 4, 16, 1.0, &mut rng);
    let g = Graph::from_edges(n, &edges, x, 16)?.with_labels(Labels::Node(blocks))?;
    Dataset::new("lp_graph", Task::LinkPrediction, vec![g])
}

/// Newman modularity of a node partition.
pub fn modularity(g: &Graph, communities: &[usize]) -> f64 {
    let two_m = g.targets().len() as f64;
    if two_m == 0.0 {
        return 0.0;
    }
    let k = communities.iter().max().map_or(0, |m| m + 1);
    let mut internal = vec![0.0; k];
    let mut degree_sum = vec![0.0; k];
    for v in 0..g.num_nodes() {
        let c = communities[v];
        degree_sum[c] += g.degree(v) as f64;
        internal[c] += g.neighbors(v).iter().filter(|&&u| communities[u] == c).count() as f64;
    }
    (0..k)
        .map(|c| internal[c] / two_m - (degree_sum[c] / two_m).powi(2))
        .sum()
}
