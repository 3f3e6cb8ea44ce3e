//! Dense layers, normalization, dropout, metrics and the optimizer.

mod adam;
mod metrics;

pub use adam::Adam;
pub use metrics::{accuracy, mean_absolute_error, roc_auc, softmax_rows};

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{Ctx, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

pub(crate) fn check_width<T: Scalar>(ctx: &Ctx<'_, T>, x: Var, width: usize) -> Result<usize> {
    let shape = ctx.tape.shape(x);
    if shape.len() != 2 || shape[1] != width {
        return Err(Error::Dimension(format!(
            "expected input of width {width}, got shape {shape:?}"
        )));
    }
    Ok(shape[0])
}

/// Affine map `y = x·Wᵀ + b` with `W` of shape `[out × in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    in_dim: usize,
    out_dim: usize,
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Linear {
    /// Weights and bias drawn from `U(±1/√in)`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config(format!(
                "linear layer {name} needs positive widths, got {in_dim}->{out_dim}"
            )));
        }
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = uniform(rng, &[out_dim, in_dim], bound);
        let b = bias.then(|| uniform(rng, &[out_dim], bound));
        Self::from_tensors(store, name, w, b)
    }

    pub fn from_tensors<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        weight: Tensor<T>,
        bias: Option<Tensor<T>>,
    ) -> Result<Self> {
        let (out_dim, in_dim) = weight.dims2()?;
        if let Some(b) = &bias {
            if b.shape() != [out_dim] {
                return Err(Error::Dimension(format!(
                    "bias of shape {:?} for weight {:?}",
                    b.shape(),
                    weight.shape()
                )));
            }
        }
        let weight = store.add_param(format!("{name}.weight"), weight);
        let bias = bias.map(|b| store.add_param(format!("{name}.bias"), b));
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.bias
    }

    pub fn num_params(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias.is_some() { self.out_dim } else { 0 }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        check_width(ctx, x, self.in_dim)?;
        let w = ctx.param(self.weight);
        let y = ctx.tape.matmul_nt(x, w)?;
        match self.bias {
            Some(b) => {
                let b = ctx.param(b);
                ctx.tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Affine layers with ReLU between them and nothing after the last.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "mlp {name} needs at least input and output widths, got {dims:?}"
            )));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("mlp with no layers".into()));
        }
        if let Some(w) = layers.windows(2).find(|w| w[0].out_dim != w[1].in_dim) {
            return Err(Error::Config(format!(
                "mlp layers do not compose: {} -> {}",
                w[0].out_dim, w[1].in_dim
            )));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Linear::num_params).sum()
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = ctx.tape.relu(h);
            }
            h = layer.forward(ctx, h)?;
        }
        Ok(h)
    }
}

/// Per-column batch normalization with running statistics for eval mode.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    dim: usize,
    momentum: f64,
    eps: f64,
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

impl BatchNorm {
    pub const MOMENTUM: f64 = 0.1;
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config(format!("batch norm {name} of width 0")));
        }
        Ok(Self {
            dim,
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
            gamma: store.add_param(format!("{name}.gamma"), Tensor::full(&[dim], T::one())),
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(&[dim])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[dim])),
            running_var: store.add_buffer(
                format!("{name}.running_var"),
                Tensor::full(&[dim], T::one()),
            ),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> ParamId {
        self.gamma
    }

    pub fn beta(&self) -> ParamId {
        self.beta
    }

    pub fn running_mean(&self) -> ParamId {
        self.running_mean
    }

    pub fn running_var(&self) -> ParamId {
        self.running_var
    }

    pub fn num_params(&self) -> usize {
        2 * self.dim
    }

    /// Train mode normalizes with batch statistics and queues a running-stat
    /// update on the context; eval mode uses the stored statistics.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let n = check_width(ctx, x, self.dim)?;
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        if ctx.is_train() {
            let (y, mean, var) = ctx.tape.batch_norm(x, gamma, beta, T::of(self.eps))?;
            let m = T::of(self.momentum);
            let keep = T::one() - m;
            // unbiased for the running estimate; a single row has no spread to correct
            let correction = if n > 1 {
                T::of(n as f64 / (n - 1) as f64)
            } else {
                T::one()
            };
            let rm = ctx.buffer(self.running_mean).data();
            let rv = ctx.buffer(self.running_var).data();
            let new_mean = rm.iter().zip(&mean).map(|(&r, &b)| keep * r + m * b).collect();
            let new_var = rv
                .iter()
                .zip(&var)
                .map(|(&r, &b)| keep * r + m * b * correction)
                .collect();
            ctx.push_update(self.running_mean, new_mean);
            ctx.push_update(self.running_var, new_var);
            Ok(y)
        } else {
            let rm = ctx.buffer(self.running_mean).data();
            let rv = ctx.buffer(self.running_var).data();
            let eps = T::of(self.eps);
            let inv: Vec<T> = rv.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let shift: Vec<T> = rm.iter().map(|&m| -m).collect();
            let shift = ctx.tape.constant(Tensor::vector(shift));
            let inv = ctx.tape.constant(Tensor::vector(inv));
            let centered = ctx.tape.add(x, shift)?;
            let xhat = ctx.tape.mul(centered, inv)?;
            let scaled = ctx.tape.mul(xhat, gamma)?;
            ctx.tape.add(scaled, beta)
        }
    }
}

/// Inverted dropout: in train mode each entry is zeroed with probability
/// `p` and survivors are scaled by `1/(1-p)`. Identity in eval mode.
pub fn dropout<T: Scalar>(ctx: &mut Ctx<'_, T>, x: Var, p: f64) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
    }
    if p == 0.0 || !ctx.is_train() {
        return Ok(x);
    }
    let shape = ctx.tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let keep = T::of(1.0 / (1.0 - p));
    let rng = ctx
        .rng()
        .ok_or_else(|| Error::Contract("dropout in train mode needs an rng".into()))?;
    let mask: Vec<T> = (0..n)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    let mask = ctx.tape.constant(Tensor::new(shape, mask)?);
    ctx.tape.mul(x, mask)
}
