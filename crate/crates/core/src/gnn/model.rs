use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{LayerKind, LayerOptions, MpLayer};
use super::{readout, GraphInput};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::graph::{Dataset, Task};
use crate::kan::{BasisConfig, KanStack};
use crate::nn::{dropout, BatchNorm, Mlp};
use crate::params::{Ctx, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Bspline,
    Rbf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    NodeClassifier,
    GraphClassifier,
    GraphRegressor,
    LinkDecoder,
}

impl HeadKind {
    pub fn is_graph_level(self) -> bool {
        matches!(self, Self::GraphClassifier | Self::GraphRegressor)
    }
}

/// Architecture description. KAN fields are ignored by GCN/GIN/GAT and
/// pooling is ignored by node and link heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub layer: LayerKind,
    pub basis: BasisKind,
    pub in_dim: usize,
    /// Classes or regression targets; unused by the link decoder.
    pub out_dim: usize,
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// Layers in each GIN / KAGIN transform.
    pub stack_depth: usize,
    /// B-spline intervals, or the number of RBF centers.
    pub grid_size: usize,
    pub spline_order: usize,
    pub heads: usize,
    pub dropout: f64,
    pub batch_norm: bool,
    /// Defaults to sum for GIN/GAT kinds and mean for GCN kinds.
    pub pooling: Option<Pooling>,
    pub head: HeadKind,
    /// Layers in the output head; defaults to `stack_depth`.
    pub head_layers: Option<usize>,
    pub base_path: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            layer: LayerKind::Gin,
            basis: BasisKind::Bspline,
            in_dim: 1,
            out_dim: 1,
            num_layers: 2,
            hidden_dim: 16,
            stack_depth: 2,
            grid_size: 4,
            spline_order: 3,
            heads: 4,
            dropout: 0.0,
            batch_norm: true,
            pooling: None,
            head: HeadKind::GraphClassifier,
            head_layers: None,
            base_path: true,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_dim", self.in_dim),
            ("num_layers", self.num_layers),
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("head_layers", self.head_depth()),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.head != HeadKind::LinkDecoder && self.out_dim == 0 {
            return Err(Error::Config("out_dim must be at least 1".into()));
        }
        if self.layer.is_gin() && self.stack_depth < 2 {
            return Err(Error::Config(format!(
                "stack_depth must be at least 2 for {}, got {}",
                self.layer, self.stack_depth
            )));
        }
        if self.layer.is_attention() && self.num_layers > 1 && self.hidden_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads {} must divide hidden_dim {}",
                self.heads, self.hidden_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.layer.is_kan() {
            self.basis_config().build::<f64>()?;
        }
        Ok(())
    }

    pub fn basis_config(&self) -> BasisConfig {
        match self.basis {
            BasisKind::Bspline => BasisConfig::bspline(self.grid_size, self.spline_order),
            BasisKind::Rbf => BasisConfig::rbf(self.grid_size),
        }
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling.unwrap_or(match self.layer {
            LayerKind::Gcn | LayerKind::Kagcn => Pooling::Mean,
            _ => Pooling::Sum,
        })
    }

    pub fn head_depth(&self) -> usize {
        self.head_layers.unwrap_or(self.stack_depth)
    }

    /// Widths of the output head, `[hidden, hidden.., out]`.
    pub fn head_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.hidden_dim; self.head_depth()];
        dims.push(self.out_dim);
        dims
    }

    /// Sets input and output widths and the head from a dataset.
    pub fn fit_to(&mut self, ds: &Dataset) {
        self.in_dim = ds.feat_dim();
        self.out_dim = ds.out_dim();
        self.head = match ds.task {
            Task::NodeClassification { .. } => HeadKind::NodeClassifier,
            Task::GraphClassification { .. } => HeadKind::GraphClassifier,
            Task::GraphRegression { .. } => HeadKind::GraphRegressor,
            Task::LinkPrediction => HeadKind::LinkDecoder,
        };
    }

    /// Short label such as `bs-kagin` or `gcn`.
    pub fn label(&self) -> String {
        if self.layer.is_kan() {
            let prefix = match self.basis {
                BasisKind::Bspline => "bs",
                BasisKind::Rbf => "rbf",
            };
            format!("{prefix}-{}", self.layer)
        } else {
            self.layer.to_string()
        }
    }
}

#[derive(Clone, Debug)]
enum Head<T> {
    Mlp(Mlp),
    Kan(KanStack<T>),
    Identity,
}

/// A spec-built network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T> {
    spec: ModelSpec,
    store: ParamStore<T>,
    layers: Vec<MpLayer<T>>,
    norms: Vec<BatchNorm>,
    head: Head<T>,
}

impl<T: Scalar> Model<T> {
    /// Builds and initializes the model from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut layers = Vec::with_capacity(spec.num_layers);
        let mut norms = Vec::new();
        for l in 0..spec.num_layers {
            let opts = LayerOptions {
                basis: spec.basis_config(),
                base_path: spec.base_path,
                stack_depth: spec.stack_depth,
                heads: spec.heads,
                concat: l + 1 < spec.num_layers,
            };
            let in_dim = if l == 0 { spec.in_dim } else { spec.hidden_dim };
            let name = format!("mp{l}");
            layers.push(MpLayer::new(
                &mut store,
                &name,
                spec.layer,
                in_dim,
                spec.hidden_dim,
                &opts,
                &mut rng,
            )?);
            if spec.batch_norm {
                norms.push(BatchNorm::new(&mut store, &format!("{name}.bn"), spec.hidden_dim)?);
            }
        }
        let head = match spec.head {
            HeadKind::LinkDecoder => Head::Identity,
            _ if spec.layer.is_kan() => Head::Kan(KanStack::new(
                &mut store,
                "head",
                &spec.head_dims(),
                spec.basis_config(),
                spec.base_path,
                &mut rng,
            )?),
            _ => Head::Mlp(Mlp::new(&mut store, "head", &spec.head_dims(), &mut rng)?),
        };
        Ok(Self {
            spec,
            store,
            layers,
            norms,
            head,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn layers(&self) -> &[MpLayer<T>] {
        &self.layers
    }

    /// Trainable scalars.
    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }

    /// Node embeddings after the message-passing stack; each layer is
    /// followed by batch norm (when enabled) and dropout.
    pub fn embed(&self, ctx: &mut Ctx<'_, T>, input: &GraphInput<T>) -> Result<Var> {
        if input.feat_dim() != self.spec.in_dim {
            return Err(Error::Dimension(format!(
                "model expects {} input features, graph has {}",
                self.spec.in_dim,
                input.feat_dim()
            )));
        }
        let mut h = ctx.tape.constant(input.features.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.forward(ctx, input, h)?;
            if let Some(norm) = self.norms.get(l) {
                h = norm.forward(ctx, h)?;
            }
            h = dropout(ctx, h, self.spec.dropout)?;
        }
        Ok(h)
    }

    /// Task output: node logits `[n × C]`, graph outputs `[G × out]`, or
    /// node embeddings for the link decoder.
    pub fn forward(&self, ctx: &mut Ctx<'_, T>, input: &GraphInput<T>) -> Result<Var> {
        let mut h = self.embed(ctx, input)?;
        if self.spec.head.is_graph_level() {
            h = readout(&mut ctx.tape, h, &input.graph_index, input.num_graphs, self.spec.pooling())?;
        }
        match &self.head {
            Head::Mlp(m) => m.forward(ctx, h),
            Head::Kan(k) => k.forward(ctx, h),
            Head::Identity => Ok(h),
        }
    }

    /// Eval-mode forward returning the output values.
    pub fn predict(&self, input: &GraphInput<T>) -> Result<Tensor<T>> {
        let mut ctx = Ctx::eval(&self.store);
        let out = self.forward(&mut ctx, input)?;
        Ok(ctx.tape.value(out).clone())
    }
}
