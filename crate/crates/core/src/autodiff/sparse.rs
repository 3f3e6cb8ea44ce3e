use crate::error::{dim_err, Result};
use crate::scalar::Scalar;

/// Weighted sparse row operator: `out[r] = Σ_{(c, w) ∈ row r} w · x[c]`.
///
/// Used for neighborhood aggregation; rows are stored in CSR form with
/// column indices sorted ascending within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows<T> {
    n_rows: usize,
    n_cols: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<T>,
}

impl<T: Scalar> SparseRows<T> {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        offsets: Vec<usize>,
        cols: Vec<usize>,
        weights: Vec<T>,
    ) -> Result<Self> {
        if offsets.len() != n_rows + 1
            || offsets.first() != Some(&0)
            || offsets.last() != Some(&cols.len())
            || cols.len() != weights.len()
            || offsets.windows(2).any(|w| w[0] > w[1])
            || cols.iter().any(|&c| c >= n_cols)
        {
            return dim_err("malformed sparse row operator");
        }
        Ok(Self {
            n_rows,
            n_cols,
            offsets,
            cols,
            weights,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// `(column, weight)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.offsets[r]..self.offsets[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.weights[span].iter().copied())
    }

    pub fn weight(&self, r: usize, c: usize) -> Option<T> {
        let span = self.offsets[r]..self.offsets[r + 1];
        let cols = &self.cols[span.clone()];
        cols.binary_search(&c)
            .ok()
            .map(|i| self.weights[span.start + i])
    }

    /// Row-major `x` with `n_cols` rows of width `d`.
    pub fn apply(&self, x: &[T], d: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_rows * d];
        for r in 0..self.n_rows {
            let dst = &mut out[r * d..(r + 1) * d];
            for (c, w) in self.row(r) {
                let src = &x[c * d..(c + 1) * d];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// Adds `selfᵀ · g` into `acc` (`n_cols` rows of width `d`).
    pub fn apply_transpose_into(&self, g: &[T], d: usize, acc: &mut [T]) {
        for r in 0..self.n_rows {
            let src = &g[r * d..(r + 1) * d];
            for (c, w) in self.row(r) {
                let dst = &mut acc[c * d..(c + 1) * d];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o += w * v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_and_transpose() {
        // [[1, 2], [0, 3]]
        let s = SparseRows::<f64>::new(2, 2, vec![0, 2, 3], vec![0, 1, 1], vec![1.0, 2.0, 3.0])
            .unwrap();
        assert_eq!(s.apply(&[1.0, 1.0], 1), vec![3.0, 3.0]);
        let mut acc = vec![0.0; 2];
        s.apply_transpose_into(&[1.0, 1.0], 1, &mut acc);
        assert_eq!(acc, vec![1.0, 5.0]);
        assert_eq!(s.weight(1, 1), Some(3.0));
        assert_eq!(s.weight(1, 0), None);
    }

    #[test]
    fn rejects_bad_offsets() {
        assert!(SparseRows::<f64>::new(2, 2, vec![0, 3, 2], vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseRows::<f64>::new(1, 1, vec![0, 1], vec![4], vec![1.0]).is_err());
    }
}
