//! Univariate basis families: uniform B-splines and Gaussian radial bumps.
//!
//! B-spline values come from the Cox–de Boor recursion evaluated in its
//! triangular, span-local form: for an input in knot span `s` only the
//! `k + 1` functions `s - k ..= s` are nonzero, and those are produced by
//! `k` rounds of the recursion. Between `lo`/`hi` and the outermost knots
//! only the functions that reach past the range remain nonzero; beyond the
//! knot vector every basis value is 0, leaving only the base path of a KAN
//! edge.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Uniform knot vector over `[lo, hi]` with `order` extra knots on each side.
#[derive(Clone, Debug, PartialEq)]
pub struct BsplineGrid<T> {
    lo: T,
    hi: T,
    grid_size: usize,
    order: usize,
    step: T,
    knots: Vec<T>,
}

impl<T: Scalar> BsplineGrid<T> {
    pub fn new(lo: f64, hi: f64, grid_size: usize, order: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("invalid spline range [{lo}, {hi}]")));
        }
        if grid_size == 0 {
            return Err(Error::Config("grid size must be at least 1".into()));
        }
        if order == 0 {
            return Err(Error::Config("spline order must be at least 1".into()));
        }
        let step = (hi - lo) / grid_size as f64;
        let knots = (0..grid_size + 2 * order + 1)
            .map(|i| T::of(lo + (i as f64 - order as f64) * step))
            .collect();
        Ok(Self {
            lo: T::of(lo),
            hi: T::of(hi),
            grid_size,
            order,
            step: T::of(step),
            knots,
        })
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn range(&self) -> (T, T) {
        (self.lo, self.hi)
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    /// Number of basis functions, `grid_size + order`.
    pub fn num_basis(&self) -> usize {
        self.grid_size + self.order
    }

    /// Index of the knot span used to evaluate `x`, restricted to the
    /// interior spans `order ..= order + grid_size - 1`.
    fn span(&self, x: T) -> usize {
        let rel = ((x - self.lo) / self.step).floor();
        let last = (self.grid_size - 1) as f64;
        let cell = rel.as_f64().clamp(0.0, last) as usize;
        cell + self.order
    }

    /// The `k + 1` nonzero basis values at `x` of order `k`, together with
    /// the index of the first one. `k` may be below `self.order` (used for
    /// derivatives).
    fn local_values(&self, x: T, span: usize, k: usize, out: &mut [T]) {
        let t = &self.knots;
        let mut left = [T::zero(); 16];
        let mut right = [T::zero(); 16];
        out[0] = T::one();
        for j in 1..=k {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = T::zero();
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }

    fn inside(&self, x: T) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Cox–de Boor on the full knot vector, `k` rounds; zero outside the
    /// extended knot span.
    fn full_values(&self, x: T, k: usize) -> Vec<T> {
        let t = &self.knots;
        let mut b: Vec<T> = t
            .windows(2)
            .map(|w| if x >= w[0] && x < w[1] { T::one() } else { T::zero() })
            .collect();
        for j in 1..=k {
            for i in 0..b.len() - j {
                b[i] = (x - t[i]) / (t[i + j] - t[i]) * b[i] + (t[i + j + 1] - x) / (t[i + j + 1] - t[i + 1]) * b[i + 1];
            }
        }
        b.truncate(t.len() - 1 - k);
        b
    }

    /// Writes all `num_basis()` values at `x` into `out`.
    pub fn eval_into(&self, x: T, out: &mut [T]) {
        debug_assert_eq!(out.len(), self.num_basis());
        if !self.inside(x) {
            out.copy_from_slice(&self.full_values(x, self.order));
            return;
        }
        out.fill(T::zero());
        let k = self.order;
        let span = self.span(x);
        let mut local = [T::zero(); 17];
        self.local_values(x, span, k, &mut local);
        let first = span - k;
        out[first..=span].copy_from_slice(&local[..=k]);
    }

    /// Writes `d/dx` of every basis function at `x` into `out`.
    pub fn derivative_into(&self, x: T, out: &mut [T]) {
        debug_assert_eq!(out.len(), self.num_basis());
        let k = self.order;
        if !self.inside(x) {
            let lower = self.full_values(x, k - 1);
            for (i, o) in out.iter_mut().enumerate() {
                *o = (lower[i] - lower[i + 1]) / self.step;
            }
            return;
        }
        out.fill(T::zero());
        let span = self.span(x);
        // order k-1 values for indices span-k+1 ..= span
        let mut lower = [T::zero(); 17];
        self.local_values(x, span, k - 1, &mut lower);
        let first = span - k;
        for r in 0..=k {
            let a = if r >= 1 { lower[r - 1] } else { T::zero() };
            let b = if r < k { lower[r] } else { T::zero() };
            out[first + r] = (a - b) / self.step;
        }
    }

    pub fn eval(&self, x: T) -> Vec<T> {
        let mut v = vec![T::zero(); self.num_basis()];
        self.eval_into(x, &mut v);
        v
    }
}

/// Maximum supported spline order (stack buffers in the recursion).
pub const MAX_SPLINE_ORDER: usize = 15;

/// Gaussian bumps `exp(-((x - c) / h)^2)` at sorted centers.
#[derive(Clone, Debug, PartialEq)]
pub struct RbfGrid<T> {
    centers: Vec<T>,
    bandwidth: T,
}

impl<T: Scalar> RbfGrid<T> {
    pub fn new(centers: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Config("RBF basis needs at least one center".into()));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::Config(format!("RBF bandwidth must be > 0, got {bandwidth}")));
        }
        if centers.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("RBF centers must be sorted ascending".into()));
        }
        Ok(Self {
            centers: centers.into_iter().map(T::of).collect(),
            bandwidth: T::of(bandwidth),
        })
    }

    /// `count` centers spaced uniformly on `[lo, hi]`, bandwidth equal to the
    /// spacing. A single center sits at the midpoint with bandwidth `hi - lo`.
    pub fn uniform(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Config(format!("invalid RBF range [{lo}, {hi}]")));
        }
        match count {
            0 => Err(Error::Config("RBF basis needs at least one center".into())),
            1 => Self::new(vec![0.5 * (lo + hi)], hi - lo),
            _ => {
                let spacing = (hi - lo) / (count - 1) as f64;
                let centers = (0..count).map(|i| lo + i as f64 * spacing).collect();
                Self::new(centers, spacing)
            }
        }
    }

    pub fn centers(&self) -> &[T] {
        &self.centers
    }

    pub fn bandwidth(&self) -> T {
        self.bandwidth
    }

    pub fn num_basis(&self) -> usize {
        self.centers.len()
    }

    pub fn eval_into(&self, x: T, out: &mut [T]) {
        for (o, &c) in out.iter_mut().zip(&self.centers) {
            let z = (x - c) / self.bandwidth;
            *o = (-z * z).exp();
        }
    }

    pub fn eval(&self, x: T) -> Vec<T> {
        let mut v = vec![T::zero(); self.num_basis()];
        self.eval_into(x, &mut v);
        v
    }
}

/// Free-function form of [`BsplineGrid::eval`].
pub fn bspline_basis<T: Scalar>(x: T, grid: &BsplineGrid<T>) -> Vec<T> {
    grid.eval(x)
}

/// Free-function form of [`RbfGrid::eval`] for ad-hoc centers.
pub fn rbf_basis<T: Scalar>(x: T, centers: &[T], bandwidth: T) -> Vec<T> {
    centers
        .iter()
        .map(|&c| {
            let z = (x - c) / bandwidth;
            (-z * z).exp()
        })
        .collect()
}

/// Which univariate family a KAN layer uses, with its sizing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisConfig {
    Bspline {
        grid_size: usize,
        order: usize,
        lo: f64,
        hi: f64,
    },
    Rbf {
        centers: usize,
        lo: f64,
        hi: f64,
    },
}

impl BasisConfig {
    /// B-splines on the default range `[-1, 1]`.
    pub fn bspline(grid_size: usize, order: usize) -> Self {
        Self::Bspline {
            grid_size,
            order,
            lo: -1.0,
            hi: 1.0,
        }
    }

    /// Gaussian bumps on the default range `[-2, 2]`.
    pub fn rbf(centers: usize) -> Self {
        Self::Rbf {
            centers,
            lo: -2.0,
            hi: 2.0,
        }
    }

    pub fn num_basis(&self) -> usize {
        match *self {
            Self::Bspline {
                grid_size, order, ..
            } => grid_size + order,
            Self::Rbf { centers, .. } => centers,
        }
    }

    pub fn build<T: Scalar>(&self) -> Result<Basis<T>> {
        match *self {
            Self::Bspline {
                grid_size,
                order,
                lo,
                hi,
            } => {
                if order > MAX_SPLINE_ORDER {
                    return Err(Error::Config(format!(
                        "spline order {order} exceeds the supported maximum {MAX_SPLINE_ORDER}"
                    )));
                }
                Ok(Basis::Bspline(BsplineGrid::new(lo, hi, grid_size, order)?))
            }
            Self::Rbf { centers, lo, hi } => Ok(Basis::Rbf(RbfGrid::uniform(lo, hi, centers)?)),
        }
    }
}

/// A constructed basis family.
#[derive(Clone, Debug, PartialEq)]
pub enum Basis<T> {
    Bspline(BsplineGrid<T>),
    Rbf(RbfGrid<T>),
}

impl<T: Scalar> Basis<T> {
    pub fn num_basis(&self) -> usize {
        match self {
            Self::Bspline(g) => g.num_basis(),
            Self::Rbf(g) => g.num_basis(),
        }
    }

    pub fn eval_into(&self, x: T, out: &mut [T]) {
        match self {
            Self::Bspline(g) => g.eval_into(x, out),
            Self::Rbf(g) => g.eval_into(x, out),
        }
    }

    pub fn eval(&self, x: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.num_basis()];
        self.eval_into(x, &mut out);
        out
    }

    /// `d/dx` of each basis function; `values` must hold the basis values at `x`.
    pub fn derivative_into(&self, x: T, values: &[T], out: &mut [T]) {
        match self {
            Self::Bspline(g) => g.derivative_into(x, out),
            Self::Rbf(g) => {
                let h2 = g.bandwidth * g.bandwidth;
                let two = T::of(2.0);
                for ((o, &c), &v) in out.iter_mut().zip(&g.centers).zip(values) {
                    *o = -two * (x - c) / h2 * v;
                }
            }
        }
    }
}
