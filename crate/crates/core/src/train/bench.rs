use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{median, Problem, TrainConfig, Trainer};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::gnn::{BasisKind, GraphInput, HeadKind, LayerKind, Model, ModelSpec, Transform};
use crate::gradcheck::{check_param_gradients, GradCheck, Mismatch};
use crate::graph::{make_batch, Graph};
use crate::kan::{BasisConfig, KanLayer};
use crate::nn::{Linear, Mlp};
use crate::params::{Ctx, Mode, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Trainable scalars of a model.
pub fn count_params<T: Scalar>(model: &Model<T>) -> usize {
    model.num_params()
}

/// Median wall-clock seconds per training epoch (forward, backward and
/// optimizer step) over `n_epochs`, after two warmup epochs. With
/// `backward == false` only the forward passes are timed.
pub fn time_epochs<T: Scalar>(
    spec: &ModelSpec,
    problem: &Problem<T>,
    cfg: &TrainConfig,
    n_epochs: usize,
    backward: bool,
) -> Result<f64> {
    if n_epochs < 5 {
        return Err(Error::Config(format!("timing needs at least 5 epochs, got {n_epochs}")));
    }
    let mut trainer = Trainer::new(spec.clone(), problem, cfg.lr, cfg.seed)?;
    let epoch = |t: &mut Trainer<'_, T>| -> Result<()> {
        if backward {
            t.run_epoch().map(|_| ())
        } else {
            t.run_frozen_epoch()
        }
    };
    for _ in 0..2 {
        epoch(&mut trainer)?;
    }
    let mut times = Vec::with_capacity(n_epochs);
    for _ in 0..n_epochs {
        let t0 = Instant::now();
        epoch(&mut trainer)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    Ok(median(&mut times))
}

/// Upper bound on the size of a gradient-check configuration.
pub const SUITE_MAX_PARAMS: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub name: String,
    pub num_params: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub passed: bool,
    pub worst: Option<Mismatch>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSuite {
    pub seed: u64,
    pub rows: Vec<GradcheckRow>,
}

impl GradcheckSuite {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }
}

fn row(name: &str, check: GradCheck) -> GradcheckRow {
    GradcheckRow {
        name: name.to_string(),
        num_params: check.num_params,
        max_rel_err: check.max_rel_err,
        max_abs_err: check.max_abs_err,
        passed: check.passed(),
        worst: check.worst,
    }
}

fn limit(name: &str, n: usize) -> Result<()> {
    if n > SUITE_MAX_PARAMS {
        return Err(Error::Config(format!(
            "gradient check config {name} has {n} parameters, limit is {SUITE_MAX_PARAMS}"
        )));
    }
    Ok(())
}

fn small_graph(rng: &mut ChaCha8Rng, d: usize) -> Result<Graph> {
    let n = rng.random_range(4..=6);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < 0.5 {
                edges.push((u, v));
            }
        }
    }
    let x = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    Graph::from_edges(n, &edges, x, d)
}

/// `Σ w ⊙ y` for a fixed random `w`, so every output entry contributes.
fn weighted_sum(ctx: &mut Ctx<'_, f64>, y: Var, w: &Tensor<f64>) -> Result<Var> {
    let wv = ctx.tape.constant(w.clone());
    let p = ctx.tape.mul(y, wv)?;
    Ok(ctx.tape.sum(p))
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("shape and data agree")
}

/// Central-difference check of every parameter gradient for the canonical
/// configurations: a linear layer, an MLP, a KAN layer per basis, and a
/// small graph classifier for every layer kind and KAN basis.
pub fn gradcheck_suite(seed: u64) -> Result<GradcheckSuite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let x = random_tensor(&mut rng, &[5, 3]);
    let w = random_tensor(&mut rng, &[5, 2]);

    let dense = ["linear", "mlp", "kan-bspline", "kan-rbf"];
    for name in dense {
        let mut store = ParamStore::new();
        let layer: Transform<f64> = match name {
            "linear" => Transform::Linear(Linear::new(&mut store, name, 3, 2, true, &mut rng)?),
            "mlp" => Transform::Mlp(Mlp::new(&mut store, name, &[3, 4, 2], &mut rng)?),
            "kan-bspline" => Transform::Kan(KanLayer::new(&mut store, name, 3, 2, BasisConfig::bspline(3, 3), true, &mut rng)?),
            _ => Transform::Kan(KanLayer::new(&mut store, name, 3, 2, BasisConfig::rbf(4), true, &mut rng)?),
        };
        limit(name, store.num_trainable())?;
        let check = check_param_gradients(&mut store, Mode::Eval, |ctx| {
            let xv = ctx.tape.constant(x.clone());
            let y = layer.forward(ctx, xv)?;
            weighted_sum(ctx, y, &w)
        })?;
        rows.push(row(name, check));
    }

    let graphs = (0..3)
        .map(|_| small_graph(&mut rng, 2))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Graph> = graphs.iter().collect();
    let input = GraphInput::<f64>::from_batch(&make_batch(&refs)?);
    let labels: Vec<usize> = vec![0, 1, 1];
    for kind in LayerKind::ALL {
        let bases: &[BasisKind] = if kind.is_kan() {
            &[BasisKind::Bspline, BasisKind::Rbf]
        } else {
            &[BasisKind::Bspline]
        };
        for &basis in bases {
            let spec = ModelSpec {
                layer: kind,
                basis,
                in_dim: 2,
                out_dim: 2,
                num_layers: 2,
                hidden_dim: 4,
                stack_depth: 2,
                grid_size: 3,
                spline_order: 2,
                heads: 2,
                head: HeadKind::GraphClassifier,
                head_layers: Some(1),
                ..ModelSpec::default()
            };
            let name = spec.label();
            let model = Model::<f64>::new(spec, rng.random())?;
            limit(&name, model.num_params())?;
            let mut store = model.store().clone();
            let check = check_param_gradients(&mut store, Mode::Train, |ctx| {
                let y = model.forward(ctx, &input)?;
                ctx.tape.cross_entropy(y, labels.clone().into())
            })?;
            rows.push(row(&name, check));
        }
    }
    Ok(GradcheckSuite { seed, rows })
}
