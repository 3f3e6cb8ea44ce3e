use super::{Graph, Labels};
use crate::error::{Error, Result};

/// Several graphs merged into one block-diagonal graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBatch {
    pub graph: Graph,
    /// Graph id of every merged node.
    pub graph_index: Vec<usize>,
    pub num_graphs: usize,
    /// First merged node of each graph, plus the total at the end.
    pub node_offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn graph_size(&self, g: usize) -> usize {
        self.node_offsets[g + 1] - self.node_offsets[g]
    }
}

/// Concatenates graphs; graph `g`'s node `v` becomes node
/// `node_offsets[g] + v`. Node labels are concatenated when every graph
/// has them.
pub fn make_batch(graphs: &[&Graph]) -> Result<GraphBatch> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::Data("cannot batch zero graphs".into()))?;
    let d = first.feat_dim();
    if let Some(g) = graphs.iter().find(|g| g.feat_dim() != d) {
        return Err(Error::Data(format!(
            "feature width {} in a batch of width {d}",
            g.feat_dim()
        )));
    }
    let total: usize = graphs.iter().map(|g| g.num_nodes()).sum();
    let mut offsets = Vec::with_capacity(total + 1);
    let mut targets = Vec::with_capacity(graphs.iter().map(|g| g.targets().len()).sum());
    let mut x = Vec::with_capacity(total * d);
    let mut graph_index = Vec::with_capacity(total);
    let mut node_offsets = vec![0];
    let mut node_labels = Some(Vec::with_capacity(total));
    offsets.push(0);
    for (gi, g) in graphs.iter().enumerate() {
        let base = node_offsets[gi];
        let edge_base = targets.len();
        offsets.extend(g.offsets()[1..].iter().map(|&o| o + edge_base));
        targets.extend(g.targets().iter().map(|&t| t + base));
        x.extend_from_slice(g.features());
        graph_index.extend(std::iter::repeat_n(gi, g.num_nodes()));
        node_offsets.push(base + g.num_nodes());
        node_labels = match (node_labels, g.labels()) {
            (Some(mut acc), Some(Labels::Node(l))) => {
                acc.extend_from_slice(l);
                Some(acc)
            }
            _ => None,
        };
    }
    let mut graph = Graph::from_csr(total, offsets, targets, x, d)?;
    if let Some(l) = node_labels {
        graph = graph.with_labels(Labels::Node(l))?;
    }
    Ok(GraphBatch {
        graph,
        graph_index,
        num_graphs: graphs.len(),
        node_offsets,
    })
}
