use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

/// Held-out edges for transductive link prediction. Every edge list holds
/// `(u, v)` with `u < v`; each negative list matches its positive list in
/// length and no negative is an edge of the original graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSplit {
    pub train_pos: Vec<(usize, usize)>,
    pub train_neg: Vec<(usize, usize)>,
    pub val_pos: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
}

/// Removes `val_fraction` and `test_fraction` of the edges from the
/// message-passing graph and samples one non-edge per positive. Held-out
/// edges are preferably chosen so that no node loses its last neighbor.
pub fn lp_edge_split(
    g: &Graph,
    val_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<(Graph, LinkSplit)> {
    for (name, f) in [("val_fraction", val_fraction), ("test_fraction", test_fraction)] {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::Config(format!("{name} {f} outside [0, 1)")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = g.edges();
    let m = edges.len();
    let n_test = (test_fraction * m as f64).round() as usize;
    let n_val = (val_fraction * m as f64).round() as usize;
    if n_test + n_val > 0 && n_test + n_val >= m {
        return Err(Error::Data(format!(
            "holding out {} of {m} edges leaves nothing to train on",
            n_test + n_val
        )));
    }
    edges.shuffle(&mut rng);

    let mut degree: Vec<usize> = (0..g.num_nodes()).map(|v| g.degree(v)).collect();
    let mut held = vec![false; m];
    let mut held_order = Vec::with_capacity(n_test + n_val);
    for (i, &(u, v)) in edges.iter().enumerate() {
        if held_order.len() == n_test + n_val {
            break;
        }
        if degree[u] > 1 && degree[v] > 1 {
            degree[u] -= 1;
            degree[v] -= 1;
            held[i] = true;
            held_order.push(i);
        }
    }
    for i in 0..m {
        if held_order.len() == n_test + n_val {
            break;
        }
        if !held[i] {
            held[i] = true;
            held_order.push(i);
        }
    }
    let test_pos: Vec<_> = held_order[..n_test].iter().map(|&i| edges[i]).collect();
    let val_pos: Vec<_> = held_order[n_test..].iter().map(|&i| edges[i]).collect();
    let mut train_pos: Vec<_> = (0..m).filter(|&i| !held[i]).map(|i| edges[i]).collect();
    train_pos.sort_unstable();

    let n = g.num_nodes();
    let non_edges = (n * n.saturating_sub(1) / 2).saturating_sub(m);
    if m > non_edges {
        return Err(Error::Data(format!(
            "graph has {non_edges} non-edges but {m} negatives are needed"
        )));
    }
    let mut used: HashSet<(usize, usize)> = HashSet::with_capacity(m);
    let mut sample = |count: usize, rng: &mut ChaCha8Rng| {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            let pair = (a.min(b), a.max(b));
            if a != b && !g.has_edge(a, b) && used.insert(pair) {
                out.push(pair);
            }
        }
        out
    };
    let test_neg = sample(test_pos.len(), &mut rng);
    let val_neg = sample(val_pos.len(), &mut rng);
    let train_neg = sample(train_pos.len(), &mut rng);

    let train_graph = Graph::from_edges(n, &train_pos, g.features().to_vec(), g.feat_dim())?;
    let train_graph = match g.labels() {
        Some(y) => train_graph.with_labels(y.clone())?,
        None => train_graph,
    };
    Ok((
        train_graph,
        LinkSplit {
            train_pos,
            train_neg,
            val_pos,
            val_neg,
            test_pos,
            test_neg,
        },
    ))
}
