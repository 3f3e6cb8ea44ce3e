//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints one PASS/FAIL line; exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kagnn::gnn::{BasisKind, GraphInput, HeadKind, LayerKind, Model, ModelSpec, Pooling};
use kagnn::graph::synth::{cycles_vs_paths, degree_regression, lp_graph, sbm_node};
use kagnn::graph::{make_batch, Dataset, Graph};
use kagnn::kan::{bspline_basis, BsplineGrid, RbfGrid};
use kagnn::train::{
    count_params, default_split, gradcheck_suite, time_epochs, train, train_run, Phase, Problem, RunReport,
    TrainConfig, Trainer,
};
use kagnn::Tensor;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn architectures() -> Vec<(LayerKind, BasisKind)> {
    let mut out = Vec::new();
    for kind in LayerKind::ALL {
        out.push((kind, BasisKind::Bspline));
        if kind.is_kan() {
            out.push((kind, BasisKind::Rbf));
        }
    }
    out
}

fn small_spec(layer: LayerKind, basis: BasisKind, in_dim: usize, head: HeadKind) -> ModelSpec {
    ModelSpec {
        layer,
        basis,
        in_dim,
        out_dim: 3,
        num_layers: 2,
        hidden_dim: 8,
        heads: 2,
        head,
        ..ModelSpec::default()
    }
}

fn random_graph(rng: &mut ChaCha8Rng, max_n: usize, d: usize) -> Graph {
    let n = rng.random_range(2..=max_n);
    let p = rng.random_range(0.05..0.5);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let x = (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect();
    Graph::from_edges(n, &edges, x, d).unwrap()
}

fn max_abs(t: &Tensor<f64>) -> f64 {
    t.data().iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn gradient_correctness() -> Outcome {
    let t0 = Instant::now();
    let suite = gradcheck_suite(0).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let worst = suite.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let failed: Vec<&str> = suite.rows.iter().filter(|r| r.max_rel_err >= 1e-4).map(|r| r.name.as_str()).collect();
    outcome(
        suite.rows.len() == 13 && failed.is_empty() && secs < 60.0,
        format!("{} configs, max rel err {worst:.2e}, failed {failed:?}, {secs:.1} s", suite.rows.len()),
    )
}

fn basis_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_sum = 0.0f64;
    let mut support_ok = true;
    for g in 1..=8 {
        for k in 1..=4 {
            let grid = BsplineGrid::<f64>::new(-1.0, 1.0, g, k).unwrap();
            for _ in 0..1000 {
                let x = loop {
                    let x = rng.random_range(-1.0..1.0);
                    if x > -1.0 {
                        break x;
                    }
                };
                let b = bspline_basis(x, &grid);
                worst_sum = worst_sum.max((b.iter().sum::<f64>() - 1.0).abs());
                support_ok &= b.iter().filter(|&&v| v != 0.0).count() <= k + 1;
            }
        }
    }
    let mut centers_ok = true;
    for c in 1..=10 {
        let grid = RbfGrid::<f64>::uniform(-2.0, 2.0, c).unwrap();
        for (j, &center) in grid.centers().iter().enumerate() {
            centers_ok &= grid.eval(center)[j] == 1.0;
        }
    }
    outcome(
        worst_sum <= 1e-12 && support_ok && centers_ok,
        format!("max |sum - 1| {worst_sum:.1e}, local support {support_ok}, rbf centers {centers_ok}"),
    )
}

fn permutation_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = 3;
    let models: Vec<(Model<f64>, Model<f64>)> = architectures()
        .into_iter()
        .map(|(k, b)| {
            let seed = rng.random();
            (
                Model::new(small_spec(k, b, d, HeadKind::GraphClassifier), seed).unwrap(),
                Model::new(small_spec(k, b, d, HeadKind::NodeClassifier), seed).unwrap(),
            )
        })
        .collect();
    let (mut graph_rel, mut node_abs) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let g = random_graph(&mut rng, 30, d);
        let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
        perm.shuffle(&mut rng);
        let pg = g.permuted(&perm).unwrap();
        let (a, b) = (GraphInput::<f64>::from_graph(&g), GraphInput::<f64>::from_graph(&pg));
        for (graph_model, node_model) in &models {
            let (ya, yb) = (graph_model.predict(&a).unwrap(), graph_model.predict(&b).unwrap());
            graph_rel = graph_rel.max(ya.max_abs_diff(&yb) / max_abs(&ya).max(1e-300));
            let (na, nb) = (node_model.predict(&a).unwrap(), node_model.predict(&b).unwrap());
            let c = na.shape()[1];
            for (v, &p) in perm.iter().enumerate() {
                for j in 0..c {
                    node_abs = node_abs.max((na.at(v, j) - nb.at(p, j)).abs());
                }
            }
        }
    }
    outcome(
        graph_rel <= 1e-8 && node_abs <= 1e-10,
        format!("{} architectures, graph-level rel diff {graph_rel:.1e}, node-level abs diff {node_abs:.1e}", models.len()),
    )
}

fn batching_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 3;
    let graphs: Vec<Graph> = (0..12).map(|_| random_graph(&mut rng, 15, d)).collect();
    let refs: Vec<&Graph> = graphs.iter().collect();
    let batch = GraphInput::<f64>::from_batch(&make_batch(&refs).unwrap());
    let mut worst = 0.0f64;
    let mut kinds = std::collections::BTreeSet::new();
    for (k, b) in architectures() {
        for head in [HeadKind::GraphClassifier, HeadKind::NodeClassifier] {
            let model = Model::<f64>::new(small_spec(k, b, d, head), 7).unwrap();
            let batched = model.predict(&batch).unwrap();
            let mut rows = Vec::new();
            for g in &graphs {
                rows.extend_from_slice(model.predict(&GraphInput::from_graph(g)).unwrap().data());
            }
            let stacked = Tensor::new(batched.shape().to_vec(), rows).unwrap();
            worst = worst.max(batched.max_abs_diff(&stacked));
        }
        kinds.insert(k.name());
    }
    outcome(worst <= 1e-9, format!("{} layer kinds, max abs diff {worst:.1e}", kinds.len()))
}

/// First epoch (1-based) at which train-split accuracy reaches `target`.
fn epochs_to_accuracy(ds: &Dataset, spec: ModelSpec, max_epochs: usize, target: f64) -> Option<usize> {
    let cfg = TrainConfig::default();
    let split = default_split(ds, 0).unwrap();
    let problem = Problem::<f64>::new(ds, &split, &cfg).unwrap();
    let mut trainer = Trainer::new(spec, &problem, cfg.lr, 0).unwrap();
    (1..=max_epochs).find(|_| {
        trainer.run_epoch().unwrap();
        trainer.evaluate(Phase::Train).unwrap().metric >= target
    })
}

fn fitted(ds: &Dataset, layer: LayerKind, basis: BasisKind) -> ModelSpec {
    let mut spec = ModelSpec {
        layer,
        basis,
        ..ModelSpec::default()
    };
    spec.fit_to(ds);
    spec
}

fn learning_sanity() -> Outcome {
    let sbm = sbm_node(40, 0.9, 0.05, 0).unwrap();
    let a: Vec<Option<usize>> = [LayerKind::Kagcn, LayerKind::Gcn]
        .into_iter()
        .map(|k| epochs_to_accuracy(&sbm, fitted(&sbm, k, BasisKind::Bspline), 200, 1.0))
        .collect();
    let cycles = cycles_vs_paths(120, 0).unwrap();
    let b: Vec<Option<usize>> = [LayerKind::Kagin, LayerKind::Gin]
        .into_iter()
        .map(|k| epochs_to_accuracy(&cycles, fitted(&cycles, k, BasisKind::Bspline), 300, 0.95))
        .collect();

    let reg = degree_regression(120, 0).unwrap();
    let split = default_split(&reg, 0).unwrap();
    let cfg = TrainConfig::default();
    let problem = Problem::<f64>::new(&reg, &split, &cfg).unwrap();
    let mean_mae = |layer| {
        let spec = fitted(&reg, layer, BasisKind::Bspline);
        (0..5u64).map(|seed| train_run(&spec, &problem, &cfg, seed).unwrap().1.test_metric).sum::<f64>() / 5.0
    };
    let (kagin, gin) = (mean_mae(LayerKind::Kagin), mean_mae(LayerKind::Gin));
    let pass = a.iter().all(Option::is_some) && b.iter().all(Option::is_some) && kagin <= gin * 1.15;
    outcome(
        pass,
        format!(
            "(a) epochs to 100% kagcn {:?} gcn {:?}; (b) epochs to 95% kagin {:?} gin {:?}; (c) test MAE bs-kagin {kagin:.4} vs gin {gin:.4} (limit {:.4})",
            a[0],
            a[1],
            b[0],
            b[1],
            gin * 1.15
        ),
    )
}

fn speed_ordering() -> Outcome {
    let t0 = Instant::now();
    let ds = cycles_vs_paths(120, 0).unwrap();
    let split = default_split(&ds, 0).unwrap();
    let cfg = TrainConfig::default();
    let problem = Problem::<f64>::new(&ds, &split, &cfg).unwrap();
    let time = |layer, basis| {
        let spec = ModelSpec {
            hidden_dim: 64,
            num_layers: 5,
            ..fitted(&ds, layer, basis)
        };
        time_epochs(&spec, &problem, &cfg, 20, true).unwrap()
    };
    let gin = time(LayerKind::Gin, BasisKind::Bspline);
    let rbf = time(LayerKind::Kagin, BasisKind::Rbf);
    let bs = time(LayerKind::Kagin, BasisKind::Bspline);
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        gin * 1.1 <= rbf && rbf * 1.1 <= bs && secs < 600.0,
        format!(
            "s/epoch gin {gin:.4} rbf-kagin {rbf:.4} bs-kagin {bs:.4} (ratios {:.2}, {:.2}), {secs:.0} s",
            rbf / gin,
            bs / rbf
        ),
    )
}

/// Trainable scalars of a spec, from the layer definitions.
fn closed_form_params(s: &ModelSpec) -> usize {
    let per_edge = match s.basis {
        BasisKind::Bspline => s.grid_size + s.spline_order,
        BasisKind::Rbf => s.grid_size,
    } + usize::from(s.base_path);
    let kan = |d: usize, e: usize| d * e * per_edge;
    let linear = |d: usize, e: usize| d * e + e;
    let chain = |dims: &[usize], f: &dyn Fn(usize, usize) -> usize| dims.windows(2).map(|w| f(w[0], w[1])).sum::<usize>();
    let h = s.hidden_dim;
    let mut total = 0;
    for l in 0..s.num_layers {
        let d = if l == 0 { s.in_dim } else { h };
        let head_width = if l + 1 == s.num_layers { h } else { h / s.heads };
        let mut dims = vec![d];
        dims.extend(std::iter::repeat(h).take(s.stack_depth));
        total += match s.layer {
            LayerKind::Gcn => linear(d, h),
            LayerKind::Kagcn => kan(d, h),
            LayerKind::Gin => chain(&dims, &linear) + 1,
            LayerKind::Kagin => chain(&dims, &kan) + 1,
            LayerKind::Gat => linear(d, s.heads * head_width) + 2 * s.heads * head_width,
            LayerKind::Kagat => kan(d, s.heads * head_width) + 2 * s.heads * head_width,
        };
        if s.batch_norm {
            total += 2 * h;
        }
    }
    if s.head != HeadKind::LinkDecoder {
        let mut dims = vec![h; s.head_layers.unwrap_or(s.stack_depth)];
        dims.push(s.out_dim);
        total += if s.layer.is_kan() { chain(&dims, &kan) } else { chain(&dims, &linear) };
    }
    total
}

fn parameter_accounting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let heads_of = [HeadKind::NodeClassifier, HeadKind::GraphClassifier, HeadKind::GraphRegressor, HeadKind::LinkDecoder];
    let mut mismatches = Vec::new();
    for i in 0..50 {
        let layer = LayerKind::ALL[rng.random_range(0..6)];
        let heads = rng.random_range(1..=4);
        let spec = ModelSpec {
            layer,
            basis: if rng.random() { BasisKind::Bspline } else { BasisKind::Rbf },
            in_dim: rng.random_range(1..=6),
            out_dim: rng.random_range(1..=5),
            num_layers: rng.random_range(1..=4),
            hidden_dim: heads * rng.random_range(1..=5),
            stack_depth: rng.random_range(2..=4),
            grid_size: rng.random_range(1..=6),
            spline_order: rng.random_range(1..=4),
            heads,
            dropout: 0.0,
            batch_norm: rng.random(),
            pooling: Some(if rng.random() { Pooling::Sum } else { Pooling::Mean }),
            head: heads_of[rng.random_range(0..4)],
            head_layers: if rng.random() { Some(rng.random_range(1..=3)) } else { None },
            base_path: rng.random(),
        };
        let model = Model::<f64>::new(spec.clone(), i).unwrap();
        let (got, want) = (count_params(&model), closed_form_params(&spec));
        if got != want {
            mismatches.push(format!("{} {got} != {want}", spec.label()));
        }
    }
    let kan_layer = {
        let mut store = kagnn::ParamStore::<f64>::new();
        let cfg = kagnn::kan::BasisConfig::bspline(4, 3);
        kagnn::kan::KanLayer::new(&mut store, "k", 2, 3, cfg, true, &mut rng).unwrap();
        store.num_trainable()
    };
    outcome(
        mismatches.is_empty() && kan_layer == 2 * 3 * (4 + 3) + 2 * 3,
        format!("50 random specs, {} mismatches {mismatches:?}; kan layer 2x3 G=4 k=3 has {kan_layer}", mismatches.len()),
    )
}

fn link_prediction() -> Outcome {
    let ds = lp_graph(200, 0).unwrap();
    let split = default_split(&ds, 0).unwrap();
    let cfg = TrainConfig {
        repeats: 5,
        ..TrainConfig::default()
    };
    let auc = |layer, basis| train::<f64>(&fitted(&ds, layer, basis), &ds, &split, &cfg).unwrap().test_mean;
    let gcn = auc(LayerKind::Gcn, BasisKind::Bspline);
    let kagcn = auc(LayerKind::Kagcn, BasisKind::Rbf);
    outcome(
        gcn.max(kagcn) >= 0.80,
        format!("mean test ROC-AUC over 5 seeds: gcn {gcn:.4}, rbf-kagcn {kagcn:.4}"),
    )
}

fn metric_bits(r: &RunReport) -> Vec<u64> {
    let mut bits = vec![r.test_mean.to_bits(), r.test_std.map_or(0, f64::to_bits), r.param_count as u64];
    for run in &r.runs {
        bits.extend([run.train_metric, run.val_metric, run.test_metric, run.best_val_loss].map(f64::to_bits));
        bits.extend(run.train_losses.iter().chain(&run.val_losses).map(|v| v.to_bits()));
    }
    bits
}

fn determinism() -> Outcome {
    let ds = cycles_vs_paths(60, 0).unwrap();
    let split = default_split(&ds, 0).unwrap();
    let cfg = TrainConfig {
        max_epochs: 15,
        repeats: 2,
        seed: 11,
        ..TrainConfig::default()
    };
    let spec = ModelSpec {
        dropout: 0.2,
        heads: 2,
        ..fitted(&ds, LayerKind::Kagat, BasisKind::Rbf)
    };
    let a = train::<f64>(&spec, &ds, &split, &cfg).unwrap();
    let b = train::<f64>(&spec, &ds, &split, &cfg).unwrap();
    let (x, y) = (metric_bits(&a), metric_bits(&b));
    outcome(x == y, format!("{} metric fields compared, seeds {:?}", x.len(), a.seeds))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient correctness", gradient_correctness),
        ("basis identities", basis_identities),
        ("permutation invariance", permutation_invariance),
        ("batching equivalence", batching_equivalence),
        ("learning sanity", learning_sanity),
        ("speed ordering", speed_ordering),
        ("parameter accounting", parameter_accounting),
        ("link prediction", link_prediction),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.pass);
        println!("{} {}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
