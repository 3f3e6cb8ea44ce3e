//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as an append-only node; inputs always
//! have smaller ids than the node that consumes them, so [`Tape::backward`]
//! walks ids in decreasing order exactly once. Gradients of leaves are
//! returned in a [`Gradients`] value and summed over fan-out.

mod sparse;

use std::sync::Arc;

pub use sparse::SparseRows;

use crate::error::{dim_err, Error, Result};
use crate::kan::basis::Basis;
use crate::scalar::Scalar;
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Neg,
    Exp,
    Silu,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Scalar,
    Row,
}

enum Op<T> {
    Leaf,
    Add { a: Var, b: Var, bcast: Bcast },
    Mul { a: Var, b: Var, bcast: Bcast },
    Scale { a: Var, c: T },
    AddConst { a: Var },
    Unary { a: Var, f: Unary },
    MatMul { a: Var, b: Var },
    MatMulNt { a: Var, b: Var },
    Reduce { a: Var, kind: Reduction, axis: Option<usize>, argmax: Vec<usize> },
    Reshape { a: Var },
    SliceCols { a: Var, start: usize },
    ConcatCols { parts: Vec<Var> },
    GatherRows { a: Var, index: Arc<[usize]> },
    ScatterAddRows { a: Var, index: Arc<[usize]> },
    Aggregate { a: Var, op: Arc<SparseRows<T>> },
    MulCol { a: Var, s: Var },
    SegmentSoftmax { a: Var, segments: Arc<[usize]>, n_segments: usize },
    Basis { a: Var, basis: Arc<Basis<T>> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    CrossEntropy { logits: Var, labels: Arc<[usize]>, probs: Vec<T> },
    Mae { pred: Var, target: Vec<T> },
    BceLogits { logits: Var, labels: Vec<T> },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add { a, b, .. } | Op::Mul { a, b, .. } | Op::MatMul { a, b } | Op::MatMulNt { a, b } => {
                vec![*a, *b]
            }
            Op::Scale { a, .. }
            | Op::AddConst { a }
            | Op::Unary { a, .. }
            | Op::Reduce { a, .. }
            | Op::Reshape { a }
            | Op::SliceCols { a, .. }
            | Op::GatherRows { a, .. }
            | Op::ScatterAddRows { a, .. }
            | Op::Aggregate { a, .. }
            | Op::SegmentSoftmax { a, .. }
            | Op::Basis { a, .. } => vec![*a],
            Op::MulCol { a, s } => vec![*a, *s],
            Op::ConcatCols { parts } => parts.clone(),
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::CrossEntropy { logits, .. } | Op::BceLogits { logits, .. } => vec![*logits],
            Op::Mae { pred, .. } => vec![*pred],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of leaf nodes produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn acc<'g, T: Scalar>(grads: &'g mut [Option<Vec<T>>], v: Var, len: usize) -> &'g mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Rows and columns of a tensor viewed as a matrix whose trailing dims are
/// flattened.
fn as_matrix(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [r, rest @ ..] => (*r, rest.iter().product()),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input ids of a node (for structural checks).
    pub fn inputs_of(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            op => op.inputs().iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input (parameters, or inputs under gradient check).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    fn bcast(&self, a: Var, b: Var) -> Result<Bcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(Bcast::Same);
        }
        if self.value(b).len() == 1 {
            return Ok(Bcast::Scalar);
        }
        if let [_, c] = sa {
            if matches!(sb, [n] if n == c) || matches!(sb, [1, n] if n == c) {
                return Ok(Bcast::Row);
            }
        }
        dim_err(format!("cannot broadcast {sb:?} onto {sa:?}"))
    }

    /// Orders operands of a commutative op so that the broadcast one is `b`.
    fn commuted(&self, a: Var, b: Var) -> Result<(Var, Var, Bcast)> {
        match self.bcast(a, b) {
            Ok(bc) => Ok((a, b, bc)),
            Err(e) => match self.bcast(b, a) {
                Ok(bc) => Ok((b, a, bc)),
                Err(_) => Err(e),
            },
        }
    }

    fn broadcast_apply(&self, a: Var, b: Var, bcast: Bcast, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data: Vec<T> = match bcast {
            Bcast::Same => va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::Scalar => {
                let y = vb.item();
                va.data().iter().map(|&x| f(x, y)).collect()
            }
            Bcast::Row => {
                let c = vb.len();
                va.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, vb.data()[i % c]))
                    .collect()
            }
        };
        Tensor::new(va.shape().to_vec(), data).expect("broadcast keeps a's shape")
    }

    /// Elementwise sum; `b` may also be a scalar or a row vector.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b, bcast) = self.commuted(a, b)?;
        let value = self.broadcast_apply(a, b, bcast, |x, y| x + y);
        Ok(self.push(value, Op::Add { a, b, bcast }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    /// Elementwise product; `b` may also be a scalar or a row vector.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b, bcast) = self.commuted(a, b)?;
        let value = self.broadcast_apply(a, b, bcast, |x, y| x * y);
        Ok(self.push(value, Op::Mul { a, b, bcast }))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let va = self.value(a);
        let value = Tensor::new(va.shape().to_vec(), va.data().iter().map(|&x| x * c).collect())
            .expect("same shape");
        self.push(value, Op::Scale { a, c })
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let va = self.value(a);
        let value = Tensor::new(va.shape().to_vec(), va.data().iter().map(|&x| x + c).collect())
            .expect("same shape");
        self.push(value, Op::AddConst { a })
    }

    pub fn unary(&mut self, f: Unary, a: Var) -> Var {
        let va = self.value(a);
        let map = |x: T| -> T {
            match f {
                Unary::Neg => -x,
                Unary::Exp => x.exp(),
                Unary::Silu => x * sigmoid(x),
                Unary::Relu => x.max(T::zero()),
                Unary::LeakyRelu(s) => {
                    if x > T::zero() {
                        x
                    } else {
                        x * T::of(s)
                    }
                }
                Unary::Sigmoid => sigmoid(x),
                Unary::Square => x * x,
            }
        };
        let value = Tensor::new(va.shape().to_vec(), va.data().iter().map(|&x| map(x)).collect())
            .expect("same shape");
        self.push(value, Op::Unary { a, f })
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(Unary::Neg, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(Unary::Silu, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(Unary::LeakyRelu(slope), a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a)
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b)).map_err(|_| {
            Error::Dimension(format!(
                "matmul of {:?} by {:?}",
                self.shape(a),
                self.shape(b)
            ))
        })?;
        Ok(self.push(value, Op::MatMul { a, b }))
    }

    /// `a[m×k] · bᵀ` where `b` is `[n × …]` with trailing dims flattened to `k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (n, k2) = as_matrix(self.shape(b));
        if self.shape(b).len() < 2 || k != k2 {
            return dim_err(format!(
                "matmul_nt of {:?} by transpose of {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMulNt { a, b }))
    }

    /// Reduction over one axis (removed from the shape) or over all elements.
    /// The max adjoint goes to the first maximal entry.
    pub fn reduce(&mut self, kind: Reduction, a: Var, axis: Option<usize>) -> Result<Var> {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        let (outer, len, inner, out_shape) = match axis {
            None => (1, va.len(), 1, Vec::new()),
            Some(ax) if ax < shape.len() => {
                let outer = shape[..ax].iter().product();
                let inner = shape[ax + 1..].iter().product();
                let mut s = shape.clone();
                s.remove(ax);
                (outer, shape[ax], inner, s)
            }
            Some(ax) => return dim_err(format!("axis {ax} out of range for shape {shape:?}")),
        };
        if len == 0 && kind != Reduction::Sum {
            return dim_err(format!("{kind:?} over an empty axis of {shape:?}"));
        }
        let data = va.data();
        let mut out = vec![T::zero(); outer * inner];
        let mut argmax = Vec::new();
        if kind == Reduction::Max {
            argmax = vec![0; outer * inner];
        }
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| data[(o * len + j) * inner + i];
                let slot = o * inner + i;
                match kind {
                    Reduction::Sum | Reduction::Mean => {
                        let mut s = T::zero();
                        for j in 0..len {
                            s += at(j);
                        }
                        if kind == Reduction::Mean {
                            s /= T::of(len as f64);
                        }
                        out[slot] = s;
                    }
                    Reduction::Max => {
                        let mut best = 0;
                        for j in 1..len {
                            if at(j) > at(best) {
                                best = j;
                            }
                        }
                        out[slot] = at(best);
                        argmax[slot] = best;
                    }
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(
            value,
            Op::Reduce {
                a,
                kind,
                axis,
                argmax,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce(Reduction::Sum, a, None).expect("full reduction")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduction::Mean, a, None)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { a }))
    }

    /// Columns `start .. start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        let (r, c) = va.dims2()?;
        if start + len > c {
            return dim_err(format!("columns {start}..{} of {:?}", start + len, va.shape()));
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&va.row(i)[start..start + len]);
        }
        let value = Tensor::new(vec![r, len], out)?;
        Ok(self.push(value, Op::SliceCols { a, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return dim_err("concat of zero tensors");
        };
        let (r, _) = self.value(first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.value(p).dims2()?;
            if pr != r {
                return dim_err(format!(
                    "concat of {:?} with {:?}",
                    self.shape(first),
                    self.shape(p)
                ));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::new(vec![r, total], out)?;
        Ok(self.push(
            value,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Rows of `a[n×d]` selected by `index`, giving `[len(index) × d]`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let va = self.value(a);
        let (n, d) = va.dims2()?;
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return dim_err(format!("row index {bad} out of range for {:?}", va.shape()));
        }
        let mut out = Vec::with_capacity(index.len() * d);
        for &i in index.iter() {
            out.extend_from_slice(va.row(i));
        }
        let value = Tensor::new(vec![index.len(), d], out)?;
        Ok(self.push(value, Op::GatherRows { a, index }))
    }

    /// `out[index[e]] += a[e]`, giving `[n_out × d]`.
    pub fn scatter_add_rows(&mut self, a: Var, index: Arc<[usize]>, n_out: usize) -> Result<Var> {
        let va = self.value(a);
        let (e, d) = va.dims2()?;
        if index.len() != e {
            return dim_err(format!("{} scatter targets for {:?}", index.len(), va.shape()));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n_out) {
            return dim_err(format!("scatter target {bad} out of range {n_out}"));
        }
        let mut out = vec![T::zero(); n_out * d];
        for (k, &t) in index.iter().enumerate() {
            for (o, &v) in out[t * d..(t + 1) * d].iter_mut().zip(va.row(k)) {
                *o += v;
            }
        }
        let value = Tensor::new(vec![n_out, d], out)?;
        Ok(self.push(value, Op::ScatterAddRows { a, index }))
    }

    /// Sparse weighted aggregation `op · a`.
    pub fn aggregate(&mut self, op: Arc<SparseRows<T>>, a: Var) -> Result<Var> {
        let va = self.value(a);
        let (n, d) = va.dims2()?;
        if n != op.n_cols() {
            return dim_err(format!(
                "aggregation over {} nodes applied to {:?}",
                op.n_cols(),
                va.shape()
            ));
        }
        let value = Tensor::new(vec![op.n_rows(), d], op.apply(va.data(), d))?;
        Ok(self.push(value, Op::Aggregate { a, op }))
    }

    /// Scales row `e` of `a[E×d]` by `s[e]`.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var> {
        let va = self.value(a);
        let (e, d) = va.dims2()?;
        let vs = self.value(s);
        if vs.len() != e {
            return dim_err(format!("row scale {:?} for {:?}", vs.shape(), va.shape()));
        }
        let mut out = va.data().to_vec();
        for (k, &w) in vs.data().iter().enumerate() {
            out[k * d..(k + 1) * d].iter_mut().for_each(|v| *v *= w);
        }
        let value = Tensor::new(vec![e, d], out)?;
        Ok(self.push(value, Op::MulCol { a, s }))
    }

    /// Softmax of a score vector within each segment (max-subtracted).
    pub fn segment_softmax(
        &mut self,
        a: Var,
        segments: Arc<[usize]>,
        n_segments: usize,
    ) -> Result<Var> {
        let va = self.value(a);
        if va.len() != segments.len() {
            return dim_err(format!(
                "{} segment ids for scores of shape {:?}",
                segments.len(),
                va.shape()
            ));
        }
        if segments.iter().any(|&s| s >= n_segments) {
            return dim_err("segment id out of range");
        }
        let data = va.data();
        let mut max = vec![T::neg_infinity(); n_segments];
        for (&x, &s) in data.iter().zip(segments.iter()) {
            max[s] = max[s].max(x);
        }
        let mut out: Vec<T> = data
            .iter()
            .zip(segments.iter())
            .map(|(&x, &s)| (x - max[s]).exp())
            .collect();
        let mut denom = vec![T::zero(); n_segments];
        for (&v, &s) in out.iter().zip(segments.iter()) {
            denom[s] += v;
        }
        for (v, &s) in out.iter_mut().zip(segments.iter()) {
            *v /= denom[s];
        }
        let value = Tensor::new(va.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::SegmentSoftmax {
                a,
                segments,
                n_segments,
            },
        ))
    }

    /// Expands `x[n×d]` into basis values `[n × d·B]`, entry
    /// `(r, j·B + b) = basis_b(x[r, j])`.
    pub fn basis(&mut self, a: Var, basis: Arc<Basis<T>>) -> Result<Var> {
        let va = self.value(a);
        let (n, d) = va.dims2()?;
        let nb = basis.num_basis();
        let mut out = vec![T::zero(); n * d * nb];
        for (x, chunk) in va.data().iter().zip(out.chunks_exact_mut(nb)) {
            basis.eval_into(*x, chunk);
        }
        let value = Tensor::new(vec![n, d * nb], out)?;
        Ok(self.push(value, Op::Basis { a, basis }))
    }

    /// Batch normalization with batch statistics. Returns the output along
    /// with the batch mean and (biased) variance of each column.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let vx = self.value(x);
        let (n, d) = vx.dims2()?;
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return dim_err(format!(
                "batch norm over {:?} with affine params {:?}/{:?}",
                vx.shape(),
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        if n == 0 {
            return dim_err("batch norm over an empty batch");
        }
        let nf = T::of(n as f64);
        let mut mean = vec![T::zero(); d];
        for r in 0..n {
            for (m, &v) in mean.iter_mut().zip(vx.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut var = vec![T::zero(); d];
        for r in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(vx.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= nf);
        let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); n * d];
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![T::zero(); n * d];
        for r in 0..n {
            for c in 0..d {
                let h = (vx.data()[r * d + c] - mean[c]) * inv_std[c];
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let value = Tensor::new(vec![n, d], out)?;
        let v = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        Ok((v, mean, var))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: Arc<[usize]>) -> Result<Var> {
        let vl = self.value(logits);
        let (n, c) = vl.dims2()?;
        if labels.len() != n {
            return dim_err(format!("{} labels for logits {:?}", labels.len(), vl.shape()));
        }
        if n == 0 {
            return dim_err("cross entropy over zero rows");
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Data(format!("label {bad} out of range for {c} classes")));
        }
        let mut probs = vec![T::zero(); n * c];
        let mut loss = T::zero();
        for r in 0..n {
            let row = vl.row(r);
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut z = T::zero();
            for (p, &v) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
                *p = (v - max).exp();
                z += *p;
            }
            probs[r * c..(r + 1) * c].iter_mut().for_each(|p| *p /= z);
            loss += z.ln() + max - row[labels[r]];
        }
        let value = Tensor::scalar(loss / T::of(n as f64));
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            },
        ))
    }

    /// Mean absolute error against a constant target.
    pub fn mae(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let vp = self.value(pred);
        if vp.shape() != target.shape() {
            return dim_err(format!(
                "mae of {:?} against {:?}",
                vp.shape(),
                target.shape()
            ));
        }
        if vp.is_empty() {
            return dim_err("mae over zero elements");
        }
        let s: T = vp
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t).abs())
            .sum();
        let value = Tensor::scalar(s / T::of(vp.len() as f64));
        Ok(self.push(
            value,
            Op::Mae {
                pred,
                target: target.data().to_vec(),
            },
        ))
    }

    /// Mean binary cross entropy of logits against 0/1 labels.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[T]) -> Result<Var> {
        let vl = self.value(logits);
        if vl.len() != labels.len() || labels.is_empty() {
            return dim_err(format!("{} labels for logits {:?}", labels.len(), vl.shape()));
        }
        let s: T = vl
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln())
            .sum();
        let value = Tensor::scalar(s / T::of(labels.len() as f64));
        Ok(self.push(
            value,
            Op::BceLogits {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Propagates `d loss / d node` back to every leaf that requires a
    /// gradient. Seeds `d loss / d loss = 1`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Contract(format!("var {} is not on this tape", loss.0)));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add { a, b, bcast } => {
                if self.rg(*a) {
                    acc(grads, *a, g.len())
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, &v)| *d += v);
                }
                if self.rg(*b) {
                    let lb = self.value(*b).len();
                    let db = acc(grads, *b, lb);
                    match bcast {
                        Bcast::Same => db.iter_mut().zip(g).for_each(|(d, &v)| *d += v),
                        Bcast::Scalar => db[0] += g.iter().copied().sum(),
                        Bcast::Row => {
                            for (i, &v) in g.iter().enumerate() {
                                db[i % lb] += v;
                            }
                        }
                    }
                }
            }
            Op::Mul { a, b, bcast } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let lb = vb.len();
                let bval = |i: usize| match bcast {
                    Bcast::Same => vb[i],
                    Bcast::Scalar => vb[0],
                    Bcast::Row => vb[i % lb],
                };
                if self.rg(*a) {
                    let da = acc(grads, *a, va.len());
                    for (i, d) in da.iter_mut().enumerate() {
                        *d += g[i] * bval(i);
                    }
                }
                if self.rg(*b) {
                    let db = acc(grads, *b, lb);
                    for (i, (&gv, &av)) in g.iter().zip(va).enumerate() {
                        let slot = match bcast {
                            Bcast::Same => i,
                            Bcast::Scalar => 0,
                            Bcast::Row => i % lb,
                        };
                        db[slot] += gv * av;
                    }
                }
            }
            Op::Scale { a, c } => {
                if self.rg(*a) {
                    acc(grads, *a, g.len())
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, &v)| *d += v * *c);
                }
            }
            Op::AddConst { a } | Op::Reshape { a } => {
                if self.rg(*a) {
                    acc(grads, *a, g.len())
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, &v)| *d += v);
                }
            }
            Op::Unary { a, f } => {
                if !self.rg(*a) {
                    return;
                }
                let x = self.value(*a).data();
                let y = out.data();
                let da = acc(grads, *a, x.len());
                for i in 0..x.len() {
                    let dydx = match f {
                        Unary::Neg => -T::one(),
                        Unary::Exp => y[i],
                        Unary::Silu => {
                            let s = sigmoid(x[i]);
                            let d = s * (T::one() + x[i] * (T::one() - s));
                            if cfg!(feature = "corrupt-adjoint") {
                                d * T::of(1.01)
                            } else {
                                d
                            }
                        }
                        Unary::Relu => {
                            if x[i] > T::zero() {
                                T::one()
                            } else {
                                T::zero()
                            }
                        }
                        Unary::LeakyRelu(s) => {
                            if x[i] > T::zero() {
                                T::one()
                            } else {
                                T::of(*s)
                            }
                        }
                        Unary::Sigmoid => y[i] * (T::one() - y[i]),
                        Unary::Square => T::of(2.0) * x[i],
                    };
                    da[i] += g[i] * dydx;
                }
            }
            Op::MatMul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = va.dims2().expect("checked at forward");
                let (_, n) = vb.dims2().expect("checked at forward");
                if self.rg(*a) {
                    // dA = G · Bᵀ
                    gemm_nt(g, vb.data(), acc(grads, *a, m * k), m, n, k);
                }
                if self.rg(*b) {
                    // dB = Aᵀ · G
                    gemm_tn(va.data(), g, acc(grads, *b, k * n), k, m, n);
                }
            }
            Op::MatMulNt { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = va.dims2().expect("checked at forward");
                let (n, _) = as_matrix(vb.shape());
                if self.rg(*a) {
                    // dA = G · B
                    gemm_nn(g, vb.data(), acc(grads, *a, m * k), m, n, k);
                }
                if self.rg(*b) {
                    // dB = Gᵀ · A
                    gemm_tn(g, va.data(), acc(grads, *b, n * k), n, m, k);
                }
            }
            Op::Reduce {
                a,
                kind,
                axis,
                argmax,
            } => {
                if !self.rg(*a) {
                    return;
                }
                let va = self.value(*a);
                let shape = va.shape();
                let (outer, len, inner) = match axis {
                    None => (1, va.len(), 1),
                    Some(ax) => (
                        shape[..*ax].iter().product(),
                        shape[*ax],
                        shape[ax + 1..].iter().product(),
                    ),
                };
                let da = acc(grads, *a, va.len());
                let scale = match kind {
                    Reduction::Mean => T::one() / T::of(len as f64),
                    _ => T::one(),
                };
                for o in 0..outer {
                    for i in 0..inner {
                        let slot = o * inner + i;
                        match kind {
                            Reduction::Sum | Reduction::Mean => {
                                for j in 0..len {
                                    da[(o * len + j) * inner + i] += g[slot] * scale;
                                }
                            }
                            Reduction::Max => {
                                da[(o * len + argmax[slot]) * inner + i] += g[slot];
                            }
                        }
                    }
                }
            }
            Op::SliceCols { a, start } => {
                if !self.rg(*a) {
                    return;
                }
                let (r, c) = self.value(*a).dims2().expect("matrix");
                let w = out.shape()[1];
                let da = acc(grads, *a, r * c);
                for i in 0..r {
                    for j in 0..w {
                        da[i * c + start + j] += g[i * w + j];
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let total = out.shape()[1];
                let rows = out.shape()[0];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.rg(p) {
                        let dp = acc(grads, p, rows * w);
                        for i in 0..rows {
                            for j in 0..w {
                                dp[i * w + j] += g[i * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::GatherRows { a, index } => {
                if !self.rg(*a) {
                    return;
                }
                let d = out.shape()[1];
                let da = acc(grads, *a, self.value(*a).len());
                for (k, &r) in index.iter().enumerate() {
                    for j in 0..d {
                        da[r * d + j] += g[k * d + j];
                    }
                }
            }
            Op::ScatterAddRows { a, index } => {
                if !self.rg(*a) {
                    return;
                }
                let d = out.shape()[1];
                let da = acc(grads, *a, self.value(*a).len());
                for (k, &t) in index.iter().enumerate() {
                    for j in 0..d {
                        da[k * d + j] += g[t * d + j];
                    }
                }
            }
            Op::Aggregate { a, op } => {
                if !self.rg(*a) {
                    return;
                }
                let d = out.shape()[1];
                op.apply_transpose_into(g, d, acc(grads, *a, self.value(*a).len()));
            }
            Op::MulCol { a, s } => {
                let va = self.value(*a);
                let vs = self.value(*s).data();
                let d = out.shape()[1];
                if self.rg(*a) {
                    let da = acc(grads, *a, va.len());
                    for (k, &w) in vs.iter().enumerate() {
                        for j in 0..d {
                            da[k * d + j] += g[k * d + j] * w;
                        }
                    }
                }
                if self.rg(*s) {
                    let ds = acc(grads, *s, vs.len());
                    for (k, dsk) in ds.iter_mut().enumerate() {
                        let mut t = T::zero();
                        for j in 0..d {
                            t += g[k * d + j] * va.data()[k * d + j];
                        }
                        *dsk += t;
                    }
                }
            }
            Op::SegmentSoftmax {
                a,
                segments,
                n_segments,
            } => {
                if !self.rg(*a) {
                    return;
                }
                let y = out.data();
                let mut dot = vec![T::zero(); *n_segments];
                for ((&yv, &gv), &s) in y.iter().zip(g).zip(segments.iter()) {
                    dot[s] += yv * gv;
                }
                let da = acc(grads, *a, y.len());
                for (e, &s) in segments.iter().enumerate() {
                    da[e] += y[e] * (g[e] - dot[s]);
                }
            }
            Op::Basis { a, basis } => {
                if !self.rg(*a) {
                    return;
                }
                let x = self.value(*a).data();
                let nb = basis.num_basis();
                let vals = out.data();
                let mut deriv = vec![T::zero(); nb];
                let da = acc(grads, *a, x.len());
                for (i, &xi) in x.iter().enumerate() {
                    basis.derivative_into(xi, &vals[i * nb..(i + 1) * nb], &mut deriv);
                    let mut t = T::zero();
                    for (dv, &gv) in deriv.iter().zip(&g[i * nb..(i + 1) * nb]) {
                        t += *dv * gv;
                    }
                    da[i] += t;
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, d) = out.dims2().expect("matrix");
                let mut sum_g = vec![T::zero(); d];
                let mut sum_gx = vec![T::zero(); d];
                for r in 0..n {
                    for c in 0..d {
                        sum_g[c] += g[r * d + c];
                        sum_gx[c] += g[r * d + c] * xhat[r * d + c];
                    }
                }
                if self.rg(*gamma) {
                    acc(grads, *gamma, d)
                        .iter_mut()
                        .zip(&sum_gx)
                        .for_each(|(dv, &v)| *dv += v);
                }
                if self.rg(*beta) {
                    acc(grads, *beta, d)
                        .iter_mut()
                        .zip(&sum_g)
                        .for_each(|(dv, &v)| *dv += v);
                }
                if self.rg(*x) {
                    let gam = self.value(*gamma).data();
                    let nf = T::of(n as f64);
                    let dx = acc(grads, *x, n * d);
                    for r in 0..n {
                        for c in 0..d {
                            let i = r * d + c;
                            dx[i] += gam[c] * inv_std[c] / nf
                                * (nf * g[i] - sum_g[c] - xhat[i] * sum_gx[c]);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if !self.rg(*logits) {
                    return;
                }
                let c = self.shape(*logits)[1];
                let n = labels.len();
                let scale = g[0] / T::of(n as f64);
                let dl = acc(grads, *logits, n * c);
                for r in 0..n {
                    for k in 0..c {
                        let onehot = if labels[r] == k { T::one() } else { T::zero() };
                        dl[r * c + k] += (probs[r * c + k] - onehot) * scale;
                    }
                }
            }
            Op::Mae { pred, target } => {
                if !self.rg(*pred) {
                    return;
                }
                let p = self.value(*pred).data();
                let scale = g[0] / T::of(p.len() as f64);
                let dp = acc(grads, *pred, p.len());
                for ((d, &pv), &tv) in dp.iter_mut().zip(p).zip(target) {
                    let diff = pv - tv;
                    if diff > T::zero() {
                        *d += scale;
                    } else if diff < T::zero() {
                        *d -= scale;
                    }
                }
            }
            Op::BceLogits { logits, labels } => {
                if !self.rg(*logits) {
                    return;
                }
                let z = self.value(*logits).data();
                let scale = g[0] / T::of(z.len() as f64);
                let dz = acc(grads, *logits, z.len());
                for ((d, &zv), &y) in dz.iter_mut().zip(z).zip(labels) {
                    *d += (sigmoid(zv) - y) * scale;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests;
