use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn eval(build: &Build, inputs: &[Tensor<f64>]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    tape.value(out).item()
}

/// Max relative error between autodiff and central differences (h = 1e-5).
fn gradcheck(build: &Build, inputs: &[Tensor<f64>]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; input.len()]);
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(build, &plus) - eval(build, &minus)) / (2.0 * h);
            let diff = (numeric - analytic[i]).abs();
            let scale = numeric.abs().max(analytic[i].abs());
            let err = if diff < 1e-9 { 0.0 } else { diff / scale };
            worst = worst.max(err);
        }
    }
    worst
}

/// Weighted sum with fixed random weights, so every output entry matters.
fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(v).to_vec();
    let w = tape.constant(random(&shape, &mut rng));
    let p = tape.mul(v, w).unwrap();
    tape.sum(p)
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::<f64>::new();
    let i = tape.constant(Tensor::identity(2));
    let a = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let c = tape.matmul(i, a).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);

    let r = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
    let col = tape.constant(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
    let d = tape.matmul(r, col).unwrap();
    assert_eq!(tape.value(d).data(), &[11.0]);

    let err = tape.matmul(r, r).unwrap_err();
    assert!(err.to_string().contains("[1, 2]"), "{err}");
}

#[test]
fn matmul_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = vec![random(&[3, 4], &mut rng), random(&[4, 2], &mut rng)];
    let build: Box<Build> = Box::new(|t, v| {
        let c = t.matmul(v[0], v[1]).unwrap();
        project(t, c, 9)
    });
    assert!(gradcheck(&*build, &inputs) < 1e-6);

    let inputs = vec![random(&[3, 4], &mut rng), random(&[2, 2, 2], &mut rng)];
    let build: Box<Build> = Box::new(|t, v| {
        let c = t.matmul_nt(v[0], v[1]).unwrap();
        project(t, c, 10)
    });
    assert!(gradcheck(&*build, &inputs) < 1e-6);
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
    let y = tape.leaky_relu(x, 0.2);
    assert_eq!(tape.value(y).data(), &[-0.2, 0.0, 2.0]);
    let z = tape.constant(Tensor::scalar(0.0));
    let s = tape.silu(z);
    assert_eq!(tape.value(s).item(), 0.0);

    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(tape.add(a, b), Err(Error::Dimension(_))));
}

#[test]
fn elementwise_gradchecks() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v5 = vec![random(&[5], &mut rng), random(&[5], &mut rng)];
    let add: Box<Build> = Box::new(|t, v| {
        let c = t.add(v[0], v[1]).unwrap();
        project(t, c, 3)
    });
    assert!(gradcheck(&*add, &v5) < 1e-6);

    let mul: Box<Build> = Box::new(|t, v| {
        let c = t.mul(v[0], v[1]).unwrap();
        project(t, c, 4)
    });
    assert!(gradcheck(&*mul, &v5) < 1e-6);

    for f in [
        Unary::Neg,
        Unary::Exp,
        Unary::Silu,
        Unary::Relu,
        Unary::LeakyRelu(0.2),
        Unary::Sigmoid,
        Unary::Square,
    ] {
        let b: Box<Build> = Box::new(move |t, v| {
            let c = t.unary(f, v[0]);
            project(t, c, 5)
        });
        let err = gradcheck(&*b, &v5[..1]);
        assert!(err < 1e-4, "{f:?}: {err}");
    }
}

#[test]
fn broadcast_gradchecks() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![random(&[4, 3], &mut rng), random(&[3], &mut rng), random(&[], &mut rng)];
    let b: Box<Build> = Box::new(|t, v| {
        let r = t.add(v[0], v[1]).unwrap();
        let m = t.mul(r, v[1]).unwrap();
        let s = t.mul(v[2], m).unwrap();
        project(t, s, 6)
    });
    assert!(gradcheck(&*b, &inputs) < 1e-6);
}

#[test]
fn reduce_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let s = tape.sum(x);
    assert_eq!(tape.value(s).item(), 6.0);

    let m = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let mean = tape.reduce(Reduction::Mean, m, Some(0)).unwrap();
    assert_eq!(tape.value(mean).data(), &[2.0, 3.0]);
    assert!(tape.reduce(Reduction::Sum, m, Some(2)).is_err());

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::vector(vec![2.0, 2.0, 1.0]));
    let mx = tape.reduce(Reduction::Max, x, Some(0)).unwrap();
    let g = tape.backward(mx).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0, 0.0, 0.0]);
}

#[test]
fn reduce_gradchecks() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = vec![random(&[3, 4, 2], &mut rng)];
    for kind in [Reduction::Sum, Reduction::Mean, Reduction::Max] {
        for axis in [Some(0), Some(1), Some(2)] {
            let b: Box<Build> = Box::new(move |t, v| {
                let r = t.reduce(kind, v[0], axis).unwrap();
                project(t, r, 7)
            });
            let err = gradcheck(&*b, &inputs);
            assert!(err < 1e-6, "{kind:?} {axis:?}: {err}");
        }
    }
}

#[test]
fn backward_contract() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap());
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0; 4]);

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let sq = tape.mul(x, x).unwrap();
    let l = tape.sum(sq);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap(), &[2.0, 4.0]);

    assert!(matches!(tape.backward(sq), Err(Error::Contract(_))));
}

#[test]
fn repeated_backward_accumulates() {
    let mut tape = Tape::<f64>::new();
    let mut param = Tensor::vector(vec![1.0, 2.0]);
    let x = tape.leaf(param.clone());
    let sq = tape.square(x);
    let l = tape.sum(sq);
    for _ in 0..2 {
        let g = tape.backward(l).unwrap();
        param.accumulate_grad(g.get(x).unwrap()).unwrap();
    }
    assert_eq!(param.grad().unwrap(), &[4.0, 8.0]);
}

#[test]
fn tape_is_topologically_ordered() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(random(&[3, 3], &mut rng));
    let b = tape.matmul(a, a).unwrap();
    let c = tape.silu(b);
    let d = tape.add(c, a).unwrap();
    let _ = tape.sum(d);
    for id in 0..tape.len() {
        for input in tape.inputs_of(Var(id)) {
            assert!(input.id() < id);
        }
    }
}

#[test]
fn graph_ops_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let src: Arc<[usize]> = vec![0, 1, 2, 2, 3, 0].into();
    let dst: Arc<[usize]> = vec![0, 0, 1, 2, 2, 3].into();
    let inputs = vec![random(&[4, 3], &mut rng), random(&[6, 1], &mut rng)];
    let b: Box<Build> = Box::new(move |t, v| {
        let alpha = t.segment_softmax(v[1], dst.clone(), 4).unwrap();
        let msg = t.gather_rows(v[0], src.clone()).unwrap();
        let w = t.mul_col(msg, alpha).unwrap();
        let out = t.scatter_add_rows(w, dst.clone(), 4).unwrap();
        let sl = t.slice_cols(out, 1, 2).unwrap();
        let cat = t.concat_cols(&[sl, out]).unwrap();
        project(t, cat, 8)
    });
    assert!(gradcheck(&*b, &inputs) < 1e-6);

    let op = Arc::new(
        SparseRows::new(3, 4, vec![0, 2, 3, 5], vec![0, 3, 1, 1, 2], vec![0.5, 1.5, -1.0, 2.0, 0.25])
            .unwrap(),
    );
    let b: Box<Build> = Box::new(move |t, v| {
        let out = t.aggregate(op.clone(), v[0]).unwrap();
        project(t, out, 9)
    });
    assert!(gradcheck(&*b, &inputs[..1]) < 1e-6);
}

#[test]
fn segment_softmax_sums_to_one() {
    let mut tape = Tape::<f64>::new();
    let s = tape.constant(Tensor::vector(vec![1.0, 1.0, 1.0, 500.0, -3.0]));
    let a = tape.segment_softmax(s, vec![0, 0, 0, 1, 1].into(), 2).unwrap();
    let v = tape.value(a).data();
    for &x in &v[..3] {
        assert!((x - 1.0 / 3.0).abs() < 1e-15);
    }
    assert!((v[3] + v[4] - 1.0).abs() < 1e-12);
}

#[test]
fn losses_and_norm_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits = vec![random(&[3, 5], &mut rng)];
    let ce: Box<Build> = Box::new(|t, v| t.cross_entropy(v[0], vec![0, 4, 2].into()).unwrap());
    assert!(gradcheck(&*ce, &logits) < 1e-5);

    let target = random(&[3, 5], &mut rng);
    let mae: Box<Build> = Box::new(move |t, v| t.mae(v[0], &target).unwrap());
    assert!(gradcheck(&*mae, &logits) < 1e-6);

    let z = vec![random(&[6], &mut rng)];
    let bce: Box<Build> =
        Box::new(|t, v| t.bce_with_logits(v[0], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap());
    assert!(gradcheck(&*bce, &z) < 1e-6);

    let bn_in = vec![random(&[5, 3], &mut rng), random(&[3], &mut rng), random(&[3], &mut rng)];
    let bn: Box<Build> = Box::new(|t, v| {
        let (y, _, _) = t.batch_norm(v[0], v[1], v[2], 1e-5).unwrap();
        project(t, y, 11)
    });
    assert!(gradcheck(&*bn, &bn_in) < 1e-4);
}

#[test]
fn basis_op_gradcheck() {
    use crate::kan::basis::BasisConfig;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = vec![random(&[4, 2], &mut rng)];
    for cfg in [BasisConfig::bspline(4, 3), BasisConfig::bspline(3, 1), BasisConfig::rbf(5)] {
        let basis = Arc::new(cfg.build::<f64>().unwrap());
        let b: Box<Build> = Box::new(move |t, v| {
            let e = t.basis(v[0], basis.clone()).unwrap();
            project(t, e, 12)
        });
        let err = gradcheck(&*b, &x);
        assert!(err < 1e-4, "{cfg:?}: {err}");
    }
}

#[test]
fn cross_entropy_values() {
    let mut tape = Tape::<f64>::new();
    let l = tape.constant(Tensor::zeros(&[2, 4]));
    let ce = tape.cross_entropy(l, vec![1, 3].into()).unwrap();
    assert!((tape.value(ce).item() - 4f64.ln()).abs() < 1e-12);

    let l = tape.constant(Tensor::from_rows(&[vec![30.0, 0.0, 0.0]]).unwrap());
    let ce = tape.cross_entropy(l, vec![0].into()).unwrap();
    assert!(tape.value(ce).item() < 1e-12);
    assert!(matches!(
        tape.cross_entropy(l, vec![3].into()),
        Err(Error::Data(_))
    ));
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::<f64>::new();
    let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
    let x = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
    let p = tape.mul(c, x).unwrap();
    let l = tape.sum(p);
    let g = tape.backward(l).unwrap();
    assert!(g.get(c).is_none());
    assert_eq!(g.get(x).unwrap(), &[1.0, 2.0]);
}
