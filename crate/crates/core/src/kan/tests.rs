use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::gradcheck::check_param_gradients;
use crate::nn::Adam;
use crate::params::{Ctx, Mode, ParamStore};
use crate::tensor::Tensor;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(11)
}

fn random_input(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor<f64> {
    let data = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor::new(vec![n, d], data).unwrap()
}

fn eval_layer(store: &ParamStore<f64>, layer: &KanLayer<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut ctx = Ctx::eval(store);
    let xv = ctx.tape.constant(x.clone());
    let y = layer.forward(&mut ctx, xv).unwrap();
    ctx.tape.value(y).clone()
}

fn eval_stack(store: &ParamStore<f64>, stack: &KanStack<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut ctx = Ctx::eval(store);
    let xv = ctx.tape.constant(x.clone());
    let y = stack.forward(&mut ctx, xv).unwrap();
    ctx.tape.value(y).clone()
}

fn zero_all(store: &mut ParamStore<f64>) {
    for e in store.entries_mut() {
        e.tensor.data_mut().fill(0.0);
    }
}

#[test]
fn zero_parameters_give_zero_output() {
    let mut store = ParamStore::new();
    let layer = KanLayer::new(&mut store, "k", 3, 2, BasisConfig::bspline(4, 3), true, &mut rng())
        .unwrap();
    zero_all(&mut store);
    let y = eval_layer(&store, &layer, &random_input(&mut rng(), 5, 3));
    assert_eq!(y.shape(), &[5, 2]);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn single_basis_output_is_scaled_basis() {
    let mut store = ParamStore::new();
    let cfg = BasisConfig::rbf(1);
    let layer = KanLayer::new(&mut store, "k", 1, 1, cfg, false, &mut rng()).unwrap();
    store.get_mut(layer.spline_coef()).data_mut()[0] = 2.5;
    let x = Tensor::from_rows(&[vec![0.3], vec![-1.7], vec![4.0]]).unwrap();
    let y = eval_layer(&store, &layer, &x);
    for r in 0..3 {
        let b = layer.basis().eval(x.at(r, 0))[0];
        assert_eq!(y.at(r, 0), 2.5 * b);
    }
}

#[test]
fn layer_rejects_width_mismatch() {
    let mut store = ParamStore::<f64>::new();
    let layer = KanLayer::new(&mut store, "k", 3, 2, BasisConfig::rbf(4), true, &mut rng()).unwrap();
    let mut ctx = Ctx::eval(&store);
    let x = ctx.tape.constant(Tensor::zeros(&[2, 4]));
    assert!(matches!(layer.forward(&mut ctx, x), Err(Error::Dimension(_))));
}

#[test]
fn layer_gradcheck_params_and_input() {
    let mut r = rng();
    for cfg in [BasisConfig::bspline(4, 3), BasisConfig::rbf(5)] {
        let mut store = ParamStore::new();
        let layer = KanLayer::new(&mut store, "k", 3, 2, cfg, true, &mut r).unwrap();
        // the input is registered as a parameter so its gradient is checked too
        let x = store.add_param("x", random_input(&mut r, 4, 3));
        let w = random_input(&mut r, 4, 2);
        let res = check_param_gradients(&mut store, Mode::Eval, |ctx| {
            let xv = ctx.param(x);
            let y = layer.forward(ctx, xv)?;
            let wv = ctx.tape.constant(w.clone());
            let p = ctx.tape.mul(y, wv)?;
            Ok(ctx.tape.sum(p))
        })
        .unwrap();
        assert!(res.passed(), "{cfg:?}: {res:?}");
    }
}

#[test]
fn param_counts() {
    assert_eq!(kan_param_count(2, 3, &BasisConfig::bspline(4, 3), true), 48);
    assert_eq!(kan_param_count(1, 1, &BasisConfig::rbf(1), true), 2);
    let mut store = ParamStore::<f64>::new();
    let layer = KanLayer::new(&mut store, "k", 2, 3, BasisConfig::bspline(4, 3), true, &mut rng())
        .unwrap();
    assert_eq!(layer.num_params(), 48);
    assert_eq!(store.num_trainable(), 48);
    let pure = KanLayer::new(&mut store, "p", 2, 3, BasisConfig::bspline(4, 3), false, &mut rng())
        .unwrap();
    assert_eq!(pure.num_params(), 42);
    assert!(matches!(
        KanLayer::<f64>::new(&mut store, "z", 0, 0, BasisConfig::rbf(1), true, &mut rng()),
        Err(Error::Config(_))
    ));
}

#[test]
fn single_layer_stack_matches_layer() {
    let mut store = ParamStore::new();
    let layer = KanLayer::new(&mut store, "k", 3, 2, BasisConfig::bspline(5, 2), true, &mut rng())
        .unwrap();
    let x = random_input(&mut rng(), 6, 3);
    let direct = eval_layer(&store, &layer, &x);
    let stack = KanStack::from_layers(vec![layer]).unwrap();
    assert_eq!(eval_stack(&store, &stack, &x), direct);
}

#[test]
fn zero_second_layer_gives_zeros() {
    let mut store = ParamStore::new();
    let stack = KanStack::new(&mut store, "s", &[3, 4, 2], BasisConfig::rbf(6), true, &mut rng())
        .unwrap();
    for id in [stack.layers()[1].spline_coef(), stack.layers()[1].base_weight().unwrap()] {
        store.get_mut(id).data_mut().fill(0.0);
    }
    let y = eval_stack(&store, &stack, &random_input(&mut rng(), 5, 3));
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn stack_rejects_non_composing_layers() {
    let mut store = ParamStore::<f64>::new();
    let a = KanLayer::new(&mut store, "a", 3, 4, BasisConfig::rbf(3), true, &mut rng()).unwrap();
    let b = KanLayer::new(&mut store, "b", 5, 1, BasisConfig::rbf(3), true, &mut rng()).unwrap();
    assert!(matches!(KanStack::from_layers(vec![a, b]), Err(Error::Config(_))));
    assert!(matches!(
        KanStack::<f64>::new(&mut store, "s", &[3], BasisConfig::rbf(3), true, &mut rng()),
        Err(Error::Config(_))
    ));
}

#[test]
fn depth_two_stack_fits_sine() {
    let mut r = rng();
    let mut store = ParamStore::new();
    let stack = KanStack::new(&mut store, "s", &[1, 8, 1], BasisConfig::bspline(5, 3), true, &mut r)
        .unwrap();
    let xs: Vec<f64> = (0..64).map(|i| -1.0 + 2.0 * i as f64 / 63.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (std::f64::consts::PI * x).sin()).collect();
    let x = Tensor::new(vec![64, 1], xs).unwrap();
    let y = Tensor::new(vec![64, 1], ys).unwrap();
    let mut adam = Adam::new(0.01);
    let mut mse = f64::INFINITY;
    for _ in 0..2000 {
        let grads = {
            let mut ctx = Ctx::new(&store, Mode::Train, true, None);
            let xv = ctx.tape.constant(x.clone());
            let out = stack.forward(&mut ctx, xv).unwrap();
            let t = ctx.tape.constant(y.clone());
            let diff = ctx.tape.sub(out, t).unwrap();
            let sq = ctx.tape.square(diff);
            let loss = ctx.tape.mean(sq).unwrap();
            mse = ctx.tape.value(loss).item();
            ctx.backward(loss).unwrap()
        };
        store.zero_grads();
        store.accumulate(&grads).unwrap();
        adam.step(&mut store).unwrap();
    }
    let out = eval_stack(&store, &stack, &x);
    let final_mse = out
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / 64.0;
    assert!(final_mse < 1e-3, "mse {final_mse} (last step {mse})");
}

/// Fits a pure-spline 1→1 layer to `(xs, ys)` and returns its training MSE.
fn fit_and_mse(store: &mut ParamStore<f64>, layer: &KanLayer<f64>, xs: &[f64], ys: &[f64]) -> f64 {
    let nb = layer.basis().num_basis();
    let mut a = nalgebra::DMatrix::zeros(xs.len(), nb);
    for (r, &x) in xs.iter().enumerate() {
        for (b, v) in layer.basis().eval(x).into_iter().enumerate() {
            a[(r, b)] = v;
        }
    }
    let c = least_squares(&a, &nalgebra::DVector::from_column_slice(ys)).unwrap();
    store.get_mut(layer.spline_coef()).data_mut().copy_from_slice(c.as_slice());
    mse(store, layer, xs, ys)
}

fn mse(store: &ParamStore<f64>, layer: &KanLayer<f64>, xs: &[f64], ys: &[f64]) -> f64 {
    let x = Tensor::new(vec![xs.len(), 1], xs.to_vec()).unwrap();
    let y = eval_layer(store, layer, &x);
    y.data().iter().zip(ys).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / xs.len() as f64
}

#[test]
fn refinement_rejects_rbf() {
    let mut store = ParamStore::<f64>::new();
    let mut layer = KanLayer::new(&mut store, "k", 1, 1, BasisConfig::rbf(3), false, &mut rng())
        .unwrap();
    let x = Tensor::zeros(&[2, 1]);
    assert!(matches!(layer.refine_grid(&mut store, 6, &x), Err(Error::Config(_))));
}

#[test]
fn refinement_keeps_multi_edge_functions() {
    let mut r = rng();
    let mut store = ParamStore::new();
    let mut layer =
        KanLayer::new(&mut store, "k", 2, 3, BasisConfig::bspline(3, 2), true, &mut r).unwrap();
    let data = (0..80).map(|_| r.random_range(-1.0..1.0)).collect();
    let x = Tensor::new(vec![40, 2], data).unwrap();
    let before = eval_layer(&store, &layer, &x);
    layer.refine_grid(&mut store, 6, &x).unwrap();
    assert_eq!(layer.num_params(), kan_param_count(2, 3, &BasisConfig::bspline(6, 2), true));
    assert_eq!(store.get(layer.spline_coef()).shape(), &[3, 2, 8]);
    let after = eval_layer(&store, &layer, &x);
    assert!(after.max_abs_diff(&before) < 1e-9);
}

proptest! {
    #[test]
    fn partition_of_unity_and_local_support(
        g in 1usize..=8, k in 1usize..=4, u in 0.0f64..1.0
    ) {
        let grid = BsplineGrid::<f64>::new(-1.0, 1.0, g, k).unwrap();
        let x = -1.0 + 2.0 * u;
        prop_assume!(x > -1.0 && x < 1.0);
        let b = bspline_basis(x, &grid);
        prop_assert_eq!(b.len(), g + k);
        prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(b.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!(b.iter().filter(|&&v| v != 0.0).count() <= k + 1);
    }

    #[test]
    fn rbf_range_and_symmetry(c in 1usize..10, delta in -4.0f64..4.0, pick in 0usize..10) {
        let grid = RbfGrid::<f64>::uniform(-2.0, 2.0, c).unwrap();
        let center = grid.centers()[pick % c];
        let a = grid.eval(center + delta);
        let b = grid.eval(center - delta);
        let (va, vb) = (a[pick % c], b[pick % c]);
        prop_assert!((va - vb).abs() <= 1e-12 * va.max(vb));
        // within 5 bandwidths of every center nothing underflows
        prop_assert!(a.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn coefficient_gradient_is_basis_value(
        seed in 0u64..1000, out_idx in 0usize..2, rbf in any::<bool>()
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let cfg = if rbf { BasisConfig::rbf(4) } else { BasisConfig::bspline(3, 2) };
        let mut store = ParamStore::new();
        let layer = KanLayer::new(&mut store, "k", 3, 2, cfg, true, &mut r).unwrap();
        let x = random_input(&mut r, 1, 3);
        let grads = {
            let mut ctx = Ctx::new(&store, Mode::Eval, true, None);
            let xv = ctx.tape.constant(x.clone());
            let y = layer.forward(&mut ctx, xv).unwrap();
            let yi = ctx.tape.slice_cols(y, out_idx, 1).unwrap();
            let l = ctx.tape.sum(yi);
            ctx.backward(l).unwrap()
        };
        let g = grads.get(layer.spline_coef()).unwrap();
        let nb = cfg.num_basis();
        for i in 0..2 {
            for j in 0..3 {
                let basis = layer.basis().eval(x.at(0, j));
                for b in 0..nb {
                    let expect = if i == out_idx { basis[b] } else { 0.0 };
                    prop_assert!((g[(i * 3 + j) * nb + b] - expect).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn nested_refinement_never_increases_mse(
        seed in 0u64..500, g in 1usize..6, k in 1usize..4
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..50).map(|_| r.random_range(-1.0..1.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x).sin() + 0.3 * r.random_range(-1.0..1.0)).collect();
        let mut store = ParamStore::new();
        let mut layer = KanLayer::new(&mut store, "k", 1, 1, BasisConfig::bspline(g, k), false, &mut r)
            .unwrap();
        let coarse = fit_and_mse(&mut store, &layer, &xs, &ys);
        let samples = Tensor::new(vec![xs.len(), 1], xs.clone()).unwrap();
        layer.refine_grid(&mut store, 2 * g, &samples).unwrap();
        let fine = mse(&store, &layer, &xs, &ys);
        prop_assert!(fine <= coarse + 1e-9, "{} -> {}", coarse, fine);
    }
}
