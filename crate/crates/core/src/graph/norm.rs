use super::Graph;
use crate::autodiff::SparseRows;
use crate::scalar::Scalar;

/// Symmetric normalization over `A + I`: row `v` holds
/// `1/√((deg v + 1)(deg u + 1))` for each `u ∈ N(v) ∪ {v}`.
pub fn gcn_norm_coefficients<T: Scalar>(g: &Graph) -> SparseRows<T> {
    let n = g.num_nodes();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(g.targets().len() + n);
    let mut weights = Vec::with_capacity(g.targets().len() + n);
    offsets.push(0);
    for v in 0..n {
        let nb = g.neighbors(v);
        let at = nb.partition_point(|&u| u < v);
        for &u in nb[..at].iter().chain(std::iter::once(&v)).chain(&nb[at..]) {
            cols.push(u);
            weights.push(T::of(1.0 / (((g.degree(v) + 1) * (g.degree(u) + 1)) as f64).sqrt()));
        }
        offsets.push(cols.len());
    }
    SparseRows::new(n, n, offsets, cols, weights).expect("graph CSR is valid")
}

/// Unweighted neighbor sum (self excluded).
pub fn neighbor_sum<T: Scalar>(g: &Graph) -> SparseRows<T> {
    let n = g.num_nodes();
    SparseRows::new(
        n,
        n,
        g.offsets().to_vec(),
        g.targets().to_vec(),
        vec![T::one(); g.targets().len()],
    )
    .expect("graph CSR is valid")
}

/// Arcs `u → v` for every `u ∈ N(v) ∪ {v}`, grouped by target `v` with
/// sources ascending. Returns `(sources, targets)`.
pub fn attention_edges(g: &Graph) -> (Vec<usize>, Vec<usize>) {
    let n = g.num_nodes();
    let mut src = Vec::with_capacity(g.targets().len() + n);
    let mut dst = Vec::with_capacity(g.targets().len() + n);
    for v in 0..n {
        let nb = g.neighbors(v);
        let at = nb.partition_point(|&u| u < v);
        for &u in nb[..at].iter().chain(std::iter::once(&v)).chain(&nb[at..]) {
            src.push(u);
            dst.push(v);
        }
    }
    (src, dst)
}
