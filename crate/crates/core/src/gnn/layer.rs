use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GraphInput;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::kan::{BasisConfig, KanLayer, KanStack};
use crate::nn::{check_width, Linear, Mlp};
use crate::params::{Ctx, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Gcn,
    Gin,
    Gat,
    Kagcn,
    Kagin,
    Kagat,
}

impl LayerKind {
    pub const ALL: [LayerKind; 6] = [
        Self::Gcn,
        Self::Gin,
        Self::Gat,
        Self::Kagcn,
        Self::Kagin,
        Self::Kagat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gcn => "gcn",
            Self::Gin => "gin",
            Self::Gat => "gat",
            Self::Kagcn => "kagcn",
            Self::Kagin => "kagin",
            Self::Kagat => "kagat",
        }
    }

    pub fn is_kan(self) -> bool {
        matches!(self, Self::Kagcn | Self::Kagin | Self::Kagat)
    }

    pub fn is_attention(self) -> bool {
        matches!(self, Self::Gat | Self::Kagat)
    }

    pub fn is_gin(self) -> bool {
        matches!(self, Self::Gin | Self::Kagin)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown layer kind {s:?}; expected one of gcn, gin, gat, kagcn, kagin, kagat")))
    }
}

/// The feature transform inside a message-passing layer.
#[derive(Clone, Debug)]
pub enum Transform<T> {
    Linear(Linear),
    Mlp(Mlp),
    Kan(KanLayer<T>),
    KanStack(KanStack<T>),
}

impl<T: Scalar> Transform<T> {
    pub fn in_dim(&self) -> usize {
        match self {
            Self::Linear(l) => l.in_dim(),
            Self::Mlp(m) => m.in_dim(),
            Self::Kan(k) => k.in_dim(),
            Self::KanStack(k) => k.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Self::Linear(l) => l.out_dim(),
            Self::Mlp(m) => m.out_dim(),
            Self::Kan(k) => k.out_dim(),
            Self::KanStack(k) => k.out_dim(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Self::Linear(l) => l.num_params(),
            Self::Mlp(m) => m.num_params(),
            Self::Kan(k) => k.num_params(),
            Self::KanStack(k) => k.num_params(),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        match self {
            Self::Linear(l) => l.forward(ctx, x),
            Self::Mlp(m) => m.forward(ctx, x),
            Self::Kan(k) => k.forward(ctx, x),
            Self::KanStack(k) => k.forward(ctx, x),
        }
    }
}

/// Sizing shared by the layers of one model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerOptions {
    pub basis: BasisConfig,
    pub base_path: bool,
    /// Layers in the GIN / KAGIN transform.
    pub stack_depth: usize,
    pub heads: usize,
    /// Attention heads are concatenated when set, averaged otherwise.
    pub concat: bool,
}

impl Default for LayerOptions {
    fn default() -> Self {
        Self {
            basis: BasisConfig::bspline(4, 3),
            base_path: true,
            stack_depth: 2,
            heads: 1,
            concat: true,
        }
    }
}

#[derive(Clone, Debug)]
struct Attention {
    heads: usize,
    head_dim: usize,
    concat: bool,
    /// Both `[1 × heads·head_dim]`, head `k` in columns `k·head_dim ..`.
    src: ParamId,
    dst: ParamId,
}

/// One message-passing layer.
#[derive(Clone, Debug)]
pub struct MpLayer<T> {
    kind: LayerKind,
    in_dim: usize,
    out_dim: usize,
    transform: Transform<T>,
    epsilon: Option<ParamId>,
    attention: Option<Attention>,
}

impl<T: Scalar> MpLayer<T> {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: LayerKind,
        in_dim: usize,
        out_dim: usize,
        opts: &LayerOptions,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config(format!(
                "layer {name} needs positive widths, got {in_dim}->{out_dim}"
            )));
        }
        let tname = format!("{name}.transform");
        let (transform, epsilon, attention) = match kind {
            LayerKind::Gcn => (
                Transform::Linear(Linear::new(store, &tname, in_dim, out_dim, true, rng)?),
                None,
                None,
            ),
            LayerKind::Kagcn => (
                Transform::Kan(KanLayer::new(store, &tname, in_dim, out_dim, opts.basis, opts.base_path, rng)?),
                None,
                None,
            ),
            LayerKind::Gin | LayerKind::Kagin => {
                if opts.stack_depth < 2 {
                    return Err(Error::Config(format!(
                        "{kind} transform needs at least 2 layers, got stack_depth {}",
                        opts.stack_depth
                    )));
                }
                let mut dims = vec![in_dim];
                dims.extend(std::iter::repeat_n(out_dim, opts.stack_depth));
                let t = if kind == LayerKind::Gin {
                    Transform::Mlp(Mlp::new(store, &tname, &dims, rng)?)
                } else {
                    Transform::KanStack(KanStack::new(store, &tname, &dims, opts.basis, opts.base_path, rng)?)
                };
                let eps = store.add_param(format!("{name}.epsilon"), Tensor::zeros(&[1]));
                (t, Some(eps), None)
            }
            LayerKind::Gat | LayerKind::Kagat => {
                if opts.heads == 0 {
                    return Err(Error::Config(format!("layer {name} needs at least one head")));
                }
                let head_dim = if opts.concat {
                    if out_dim % opts.heads != 0 {
                        return Err(Error::Config(format!(
                            "{} heads do not divide width {out_dim} of layer {name}",
                            opts.heads
                        )));
                    }
                    out_dim / opts.heads
                } else {
                    out_dim
                };
                let width = opts.heads * head_dim;
                let t = if kind == LayerKind::Gat {
                    Transform::Linear(Linear::new(store, &tname, in_dim, width, true, rng)?)
                } else {
                    Transform::Kan(KanLayer::new(store, &tname, in_dim, width, opts.basis, opts.base_path, rng)?)
                };
                let bound = (6.0 / (head_dim as f64 + 1.0)).sqrt();
                let mut vector = |suffix: &str| {
                    let data = (0..width).map(|_| T::of(rng.random_range(-bound..=bound))).collect();
                    let t = Tensor::new(vec![1, width], data).expect("shape and data agree");
                    store.add_param(format!("{name}.{suffix}"), t)
                };
                let src = vector("att_src");
                let dst = vector("att_dst");
                let att = Attention {
                    heads: opts.heads,
                    head_dim,
                    concat: opts.concat,
                    src,
                    dst,
                };
                (t, None, Some(att))
            }
        };
        Ok(Self {
            kind,
            in_dim,
            out_dim,
            transform,
            epsilon,
            attention,
        })
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn transform(&self) -> &Transform<T> {
        &self.transform
    }

    pub fn epsilon(&self) -> Option<ParamId> {
        self.epsilon
    }

    pub fn heads(&self) -> usize {
        self.attention.as_ref().map_or(1, |a| a.heads)
    }

    /// Source and target attention vectors, `[1 × heads·head_dim]` each.
    pub fn attention_params(&self) -> Option<(ParamId, ParamId)> {
        self.attention.as_ref().map(|a| (a.src, a.dst))
    }

    pub fn num_params(&self) -> usize {
        let eps = usize::from(self.epsilon.is_some());
        let att = self
            .attention
            .as_ref()
            .map_or(0, |a| 2 * a.heads * a.head_dim);
        self.transform.num_params() + eps + att
    }

    /// The aggregated input fed to the transform of GCN- and GIN-style
    /// layers; attention layers have none.
    pub fn aggregate(&self, ctx: &mut Ctx<'_, T>, input: &GraphInput<T>, h: Var) -> Result<Option<Var>> {
        self.check_input(ctx, input, h)?;
        match self.kind {
            LayerKind::Gcn | LayerKind::Kagcn => Ok(Some(ctx.tape.aggregate(input.gcn.clone(), h)?)),
            LayerKind::Gin | LayerKind::Kagin => {
                let eps = ctx.param(self.epsilon.expect("GIN layers own an epsilon"));
                let scaled = ctx.tape.mul(h, eps)?;
                let own = ctx.tape.add(h, scaled)?;
                let nb = ctx.tape.aggregate(input.neighbors.clone(), h)?;
                Ok(Some(ctx.tape.add(own, nb)?))
            }
            LayerKind::Gat | LayerKind::Kagat => Ok(None),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_, T>, input: &GraphInput<T>, h: Var) -> Result<Var> {
        match self.aggregate(ctx, input, h)? {
            Some(agg) => {
                let z = self.transform.forward(ctx, agg)?;
                Ok(if self.kind == LayerKind::Gcn {
                    ctx.tape.relu(z)
                } else {
                    z
                })
            }
            None => Ok(self.attend(ctx, input, h)?.0),
        }
    }

    /// Attention output along with the `[E × 1]` coefficients of each head,
    /// over the arcs `input.att_src → input.att_dst`.
    pub fn attend(&self, ctx: &mut Ctx<'_, T>, input: &GraphInput<T>, h: Var) -> Result<(Var, Vec<Var>)> {
        let att = self
            .attention
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("{} layers have no attention", self.kind)))?;
        let n = self.check_input(ctx, input, h)?;
        let z = self.transform.forward(ctx, h)?;
        let a_src = ctx.param(att.src);
        let a_dst = ctx.param(att.dst);
        let dh = att.head_dim;
        let mut outs = Vec::with_capacity(att.heads);
        let mut alphas = Vec::with_capacity(att.heads);
        for k in 0..att.heads {
            let tape = &mut ctx.tape;
            let (zk, sk, dk) = if att.heads == 1 {
                (z, a_src, a_dst)
            } else {
                (
                    tape.slice_cols(z, k * dh, dh)?,
                    tape.slice_cols(a_src, k * dh, dh)?,
                    tape.slice_cols(a_dst, k * dh, dh)?,
                )
            };
            let s_src = tape.matmul_nt(zk, sk)?;
            let s_dst = tape.matmul_nt(zk, dk)?;
            let e_src = tape.gather_rows(s_src, input.att_src.clone())?;
            let e_dst = tape.gather_rows(s_dst, input.att_dst.clone())?;
            let e = tape.add(e_src, e_dst)?;
            let e = tape.leaky_relu(e, LEAKY_SLOPE);
            let alpha = tape.segment_softmax(e, input.att_dst.clone(), n)?;
            let msg = tape.gather_rows(zk, input.att_src.clone())?;
            let msg = tape.mul_col(msg, alpha)?;
            outs.push(tape.scatter_add_rows(msg, input.att_dst.clone(), n)?);
            alphas.push(alpha);
        }
        let out = if outs.len() == 1 {
            outs[0]
        } else if att.concat {
            ctx.tape.concat_cols(&outs)?
        } else {
            let mut acc = outs[0];
            for &o in &outs[1..] {
                acc = ctx.tape.add(acc, o)?;
            }
            ctx.tape.scale(acc, T::one() / T::of(att.heads as f64))
        };
        Ok((out, alphas))
    }

    fn check_input(&self, ctx: &Ctx<'_, T>, input: &GraphInput<T>, h: Var) -> Result<usize> {
        let n = check_width(ctx, h, self.in_dim)?;
        if n != input.num_nodes() {
            return Err(Error::Dimension(format!(
                "{n} feature rows for a graph of {} nodes",
                input.num_nodes()
            )));
        }
        Ok(n)
    }
}
