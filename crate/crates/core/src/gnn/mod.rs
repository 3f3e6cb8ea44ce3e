//! Message-passing layers, readout and task heads.

mod layer;
mod model;

pub use layer::{LayerKind, LayerOptions, MpLayer, Transform};
pub use model::{BasisKind, HeadKind, Model, ModelSpec, Pooling};

use std::sync::Arc;

use crate::autodiff::{Reduction, SparseRows, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{attention_edges, gcn_norm_coefficients, neighbor_sum, Graph, GraphBatch};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Everything a forward pass needs from a graph (or a batch of graphs),
/// precomputed once and shared across epochs.
#[derive(Clone, Debug)]
pub struct GraphInput<T> {
    pub features: Tensor<T>,
    pub gcn: Arc<SparseRows<T>>,
    pub neighbors: Arc<SparseRows<T>>,
    pub att_src: Arc<[usize]>,
    pub att_dst: Arc<[usize]>,
    pub graph_index: Arc<[usize]>,
    pub num_graphs: usize,
}

impl<T: Scalar> GraphInput<T> {
    pub fn from_graph(g: &Graph) -> Self {
        Self::build(g, vec![0; g.num_nodes()], 1)
    }

    pub fn from_batch(batch: &GraphBatch) -> Self {
        Self::build(&batch.graph, batch.graph_index.clone(), batch.num_graphs)
    }

    fn build(g: &Graph, graph_index: Vec<usize>, num_graphs: usize) -> Self {
        let (src, dst) = attention_edges(g);
        let features = Tensor::from_f64(vec![g.num_nodes(), g.feat_dim()], g.features())
            .expect("graph features match their shape");
        Self {
            features,
            gcn: Arc::new(gcn_norm_coefficients(g)),
            neighbors: Arc::new(neighbor_sum(g)),
            att_src: src.into(),
            att_dst: dst.into(),
            graph_index: graph_index.into(),
            num_graphs,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn feat_dim(&self) -> usize {
        self.features.shape()[1]
    }
}

/// Per-graph sum or mean of node rows, giving `[num_graphs × d]`. A graph
/// with no nodes reads out as a zero row under sum pooling and is an error
/// under mean pooling.
pub fn readout<T: Scalar>(
    tape: &mut Tape<T>,
    h: Var,
    graph_index: &[usize],
    num_graphs: usize,
    pooling: Pooling,
) -> Result<Var> {
    let n = tape.value(h).dims2()?.0;
    if graph_index.len() != n {
        return Err(Error::Dimension(format!(
            "{} graph ids for {n} node rows",
            graph_index.len()
        )));
    }
    let mut members = vec![Vec::new(); num_graphs];
    for (v, &g) in graph_index.iter().enumerate() {
        members
            .get_mut(g)
            .ok_or_else(|| Error::Data(format!("node {v} assigned to graph {g} of {num_graphs}")))?
            .push(v);
    }
    let mut offsets = Vec::with_capacity(num_graphs + 1);
    let mut cols = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    offsets.push(0);
    for (g, nodes) in members.iter().enumerate() {
        let w = match pooling {
            Pooling::Sum => T::one(),
            Pooling::Mean if nodes.is_empty() => {
                return Err(Error::Data(format!("mean pooling over empty graph {g}")));
            }
            Pooling::Mean => T::one() / T::of(nodes.len() as f64),
        };
        cols.extend_from_slice(nodes);
        weights.extend(std::iter::repeat_n(w, nodes.len()));
        offsets.push(cols.len());
    }
    let op = SparseRows::new(num_graphs, n, offsets, cols, weights)?;
    tape.aggregate(Arc::new(op), h)
}

/// Inner products `h_u · h_v` for each pair, as a vector of logits.
pub fn link_logits<T: Scalar>(tape: &mut Tape<T>, h: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let n = tape.value(h).dims2()?.0;
    if let Some(&(u, v)) = pairs.iter().find(|&&(u, v)| u >= n || v >= n) {
        return Err(Error::Data(format!("pair ({u}, {v}) out of range for {n} nodes")));
    }
    let us: Arc<[usize]> = pairs.iter().map(|p| p.0).collect();
    let vs: Arc<[usize]> = pairs.iter().map(|p| p.1).collect();
    let hu = tape.gather_rows(h, us)?;
    let hv = tape.gather_rows(h, vs)?;
    let prod = tape.mul(hu, hv)?;
    tape.reduce(Reduction::Sum, prod, Some(1))
}

/// Edge probabilities `σ(h_u · h_v)`.
pub fn link_decode<T: Scalar>(tape: &mut Tape<T>, h: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let z = link_logits(tape, h, pairs)?;
    Ok(tape.sigmoid(z))
}
