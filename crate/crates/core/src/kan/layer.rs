use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::basis::{Basis, BasisConfig};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::check_width;
use crate::params::{Ctx, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Trainable scalars of one KAN layer: a coefficient per (output, input,
/// basis function), plus the `d'×d` base weights when the base path is on.
pub fn kan_param_count(in_dim: usize, out_dim: usize, basis: &BasisConfig, base_path: bool) -> usize {
    let pairs = in_dim * out_dim;
    pairs * basis.num_basis() + if base_path { pairs } else { 0 }
}

/// `out[·,i] = Σ_j base[i,j]·silu(x_j) + Σ_b coef[i,j,b]·basis_b(x_j)`.
#[derive(Clone, Debug)]
pub struct KanLayer<T> {
    in_dim: usize,
    out_dim: usize,
    config: BasisConfig,
    basis: Arc<Basis<T>>,
    spline_coef: ParamId,
    base_weight: Option<ParamId>,
}

impl<T: Scalar> KanLayer<T> {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        config: BasisConfig,
        base_path: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config(format!(
                "KAN layer {name} needs positive widths, got {in_dim}->{out_dim}"
            )));
        }
        let basis = config.build::<T>()?;
        let nb = basis.num_basis();
        let normal = Normal::new(0.0, 0.1 / nb as f64).expect("positive std");
        let coef: Vec<T> = (0..out_dim * in_dim * nb)
            .map(|_| T::of(normal.sample(rng)))
            .collect();
        let spline_coef = store.add_param(
            format!("{name}.spline_coef"),
            Tensor::new(vec![out_dim, in_dim, nb], coef)?,
        );
        let base_weight = base_path.then(|| {
            let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
            let w = (0..out_dim * in_dim)
                .map(|_| T::of(rng.random_range(-bound..=bound)))
                .collect();
            store.add_param(
                format!("{name}.base_weight"),
                Tensor::new(vec![out_dim, in_dim], w).expect("sized above"),
            )
        });
        Ok(Self {
            in_dim,
            out_dim,
            config,
            basis: Arc::new(basis),
            spline_coef,
            base_weight,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn config(&self) -> &BasisConfig {
        &self.config
    }

    pub fn basis(&self) -> &Basis<T> {
        &self.basis
    }

    pub fn spline_coef(&self) -> ParamId {
        self.spline_coef
    }

    pub fn base_weight(&self) -> Option<ParamId> {
        self.base_weight
    }

    pub fn num_params(&self) -> usize {
        kan_param_count(
            self.in_dim,
            self.out_dim,
            &self.config,
            self.base_weight.is_some(),
        )
    }

    pub fn forward(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        check_width(ctx, x, self.in_dim)?;
        let b = ctx.tape.basis(x, Arc::clone(&self.basis))?;
        let coef = ctx.param(self.spline_coef);
        let spline = ctx.tape.matmul_nt(b, coef)?;
        match self.base_weight {
            Some(w) => {
                let s = ctx.tape.silu(x);
                let w = ctx.param(w);
                let base = ctx.tape.matmul_nt(s, w)?;
                ctx.tape.add(base, spline)
            }
            None => Ok(spline),
        }
    }

    /// Moves a B-spline layer onto a finer grid, choosing new coefficients
    /// by least squares so each edge function matches the old one on the
    /// sample inputs (`samples` is `[n × in_dim]`). The match is exact for
    /// nested grids on samples inside the grid range; past it the finer
    /// knots reach less far.
    pub fn refine_grid(
        &mut self,
        store: &mut ParamStore<T>,
        grid_size: usize,
        samples: &Tensor<T>,
    ) -> Result<()> {
        let BasisConfig::Bspline { order, lo, hi, .. } = self.config else {
            return Err(Error::Config("grid refinement needs a B-spline basis".into()));
        };
        let (n, d) = samples.dims2()?;
        if d != self.in_dim {
            return Err(Error::Dimension(format!(
                "refinement samples of width {d} for a layer of width {}",
                self.in_dim
            )));
        }
        let config = BasisConfig::Bspline {
            grid_size,
            order,
            lo,
            hi,
        };
        let fine = config.build::<T>()?;
        let (nb_old, nb_new) = (self.basis.num_basis(), fine.num_basis());
        let old = store.get(self.spline_coef).to_f64_vec();
        let mut new = vec![0.0; self.out_dim * self.in_dim * nb_new];
        let mut old_vals = vec![T::zero(); nb_old];
        let mut new_vals = vec![T::zero(); nb_new];
        for j in 0..d {
            // design matrices are shared by every output for input j
            let mut a_old = nalgebra::DMatrix::<f64>::zeros(n, nb_old);
            let mut a_new = nalgebra::DMatrix::<f64>::zeros(n, nb_new);
            for r in 0..n {
                let x = samples.at(r, j);
                self.basis.eval_into(x, &mut old_vals);
                fine.eval_into(x, &mut new_vals);
                for (b, v) in old_vals.iter().enumerate() {
                    a_old[(r, b)] = v.as_f64();
                }
                for (b, v) in new_vals.iter().enumerate() {
                    a_new[(r, b)] = v.as_f64();
                }
            }
            for i in 0..self.out_dim {
                let at = (i * self.in_dim + j) * nb_old;
                let c_old = nalgebra::DVector::from_column_slice(&old[at..at + nb_old]);
                let target = &a_old * c_old;
                let c_new = least_squares(&a_new, &target)?;
                let at = (i * self.in_dim + j) * nb_new;
                new[at..at + nb_new].copy_from_slice(c_new.as_slice());
            }
        }
        *store.get_mut(self.spline_coef) =
            Tensor::from_f64(vec![self.out_dim, self.in_dim, nb_new], &new)?;
        self.config = config;
        self.basis = Arc::new(fine);
        Ok(())
    }
}

/// Minimum-norm least-squares solution of `a·x ≈ b`. Columns are scaled to
/// unit norm before the SVD and the solution gets two rounds of iterative
/// refinement against the residual.
pub fn least_squares(
    a: &nalgebra::DMatrix<f64>,
    b: &nalgebra::DVector<f64>,
) -> Result<nalgebra::DVector<f64>> {
    let norms: Vec<f64> = a
        .column_iter()
        .map(|c| {
            let n = c.norm();
            if n > 0.0 { n } else { 1.0 }
        })
        .collect();
    let mut scaled = a.clone();
    for (j, &n) in norms.iter().enumerate() {
        scaled.column_mut(j).unscale_mut(n);
    }
    let svd = scaled.svd(true, true);
    let tol = svd.singular_values.max() * 1e-12 * a.nrows().max(a.ncols()) as f64;
    let solve = |rhs: &nalgebra::DVector<f64>| {
        svd.solve(rhs, tol)
            .map_err(|e| Error::Contract(format!("least squares failed: {e}")))
    };
    let mut x = solve(b)?;
    for _ in 0..2 {
        let r = b - &scaled_product(a, &x, &norms);
        x += solve(&r)?;
    }
    for (v, &n) in x.iter_mut().zip(&norms) {
        *v /= n;
    }
    Ok(x)
}

/// `a · diag(1/norms) · x`.
fn scaled_product(a: &nalgebra::DMatrix<f64>, x: &nalgebra::DVector<f64>, norms: &[f64]) -> nalgebra::DVector<f64> {
    let unscaled = nalgebra::DVector::from_iterator(x.len(), x.iter().zip(norms).map(|(v, n)| v / n));
    a * unscaled
}

/// Stacked KAN layers applied in order.
#[derive(Clone, Debug)]
pub struct KanStack<T> {
    layers: Vec<KanLayer<T>>,
}

impl<T: Scalar> KanStack<T> {
    /// `dims = [in, hidden.., out]`, one layer per consecutive pair.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: &[usize],
        config: BasisConfig,
        base_path: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "KAN stack {name} needs at least input and output widths, got {dims:?}"
            )));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                KanLayer::new(store, &format!("{name}.{i}"), w[0], w[1], config, base_path, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<KanLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("KAN stack with no layers".into()));
        }
        if let Some(w) = layers.windows(2).find(|w| w[0].out_dim != w[1].in_dim) {
            return Err(Error::Config(format!(
                "KAN layers do not compose: {} -> {}",
                w[0].out_dim, w[1].in_dim
            )));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[KanLayer<T>] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(KanLayer::num_params).sum()
    }

    pub fn forward(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(ctx, h)?;
        }
        Ok(h)
    }
}
