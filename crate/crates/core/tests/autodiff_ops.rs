use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rigforge_core::autodiff::gradcheck::GradCheck;
use rigforge_core::autodiff::{adam_step, AdamConfig, AutodiffError, ParamStore, Tape, Tensor, Var};

type OpFn = dyn Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>;

fn random(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(rows, cols, lo, hi, rng)
}

/// Gradcheck of `sum(op(inputs) * R)` for a fixed random `R`.
fn check(name: &str, inputs: Vec<Tensor>, op: &OpFn) {
    let mut store = ParamStore::new();
    for (i, t) in inputs.into_iter().enumerate() {
        store.insert(format!("x{i}"), t).unwrap();
    }
    let names: Vec<String> = (0..store.len()).map(|i| format!("x{i}")).collect();
    let shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = names.iter().map(|n| tape.param(&store, n).unwrap()).collect();
        let out = op(&mut tape, &vars).unwrap();
        tape.value(out).shape()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let weights = random(shape[0], shape[1], -1.0, 1.0, &mut rng);
    let report = GradCheck::default()
        .run(&store, &mut rng, |tape, s| {
            let vars: Vec<Var> = names.iter().map(|n| tape.param(s, n)).collect::<Result<_, _>>()?;
            let out = op(tape, &vars)?;
            let w = tape.constant(weights.clone())?;
            let prod = tape.mul(out, w)?;
            tape.sum(prod)
        })
        .unwrap();
    assert!(report.passes(1e-4), "{name}: {report:?}");
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut r = |rows, cols| random(rows, cols, -1.0, 1.0, &mut rng);
    let cases: Vec<(&str, Vec<Tensor>, Box<OpFn>)> = vec![
        ("matmul", vec![r(3, 4), r(4, 2)], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("add", vec![r(3, 4), r(3, 4)], Box::new(|t, v| t.add(v[0], v[1]))),
        ("sub", vec![r(3, 4), r(3, 4)], Box::new(|t, v| t.sub(v[0], v[1]))),
        ("mul", vec![r(3, 4), r(3, 4)], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("add_row", vec![r(3, 4), r(1, 4)], Box::new(|t, v| t.add_row(v[0], v[1]))),
        ("mul_col", vec![r(3, 4), r(3, 1)], Box::new(|t, v| t.mul_col(v[0], v[1]))),
        ("scale", vec![r(3, 4)], Box::new(|t, v| t.scale(v[0], -1.7))),
        ("add_scalar", vec![r(3, 4)], Box::new(|t, v| t.add_scalar(v[0], 0.3))),
        ("neg", vec![r(3, 4)], Box::new(|t, v| t.neg(v[0]))),
        ("transpose", vec![r(3, 4)], Box::new(|t, v| t.transpose(v[0]))),
        ("concat0", vec![r(2, 3), r(4, 3)], Box::new(|t, v| t.concat(&[v[0], v[1]], 0))),
        ("concat1", vec![r(3, 2), r(3, 5)], Box::new(|t, v| t.concat(&[v[0], v[1]], 1))),
        ("slice_rows", vec![r(5, 3)], Box::new(|t, v| t.slice_rows(v[0], 1, 4))),
        ("slice_cols", vec![r(3, 5)], Box::new(|t, v| t.slice_cols(v[0], 2, 5))),
        ("max_reduce0", vec![r(5, 3)], Box::new(|t, v| t.max_reduce(v[0], 0))),
        ("max_reduce1", vec![r(5, 3)], Box::new(|t, v| t.max_reduce(v[0], 1))),
        ("min_reduce1", vec![r(5, 3)], Box::new(|t, v| t.min_reduce(v[0], 1))),
        ("leaky_relu", vec![r(4, 4)], Box::new(|t, v| t.leaky_relu(v[0], 0.2))),
        ("relu", vec![r(4, 4)], Box::new(|t, v| t.relu(v[0]))),
        ("sigmoid", vec![r(3, 4)], Box::new(|t, v| t.sigmoid(v[0]))),
        ("softmax0", vec![r(3, 4)], Box::new(|t, v| t.softmax(v[0], 0))),
        ("softmax1", vec![r(3, 4)], Box::new(|t, v| t.softmax(v[0], 1))),
        ("exp", vec![r(3, 4)], Box::new(|t, v| t.exp(v[0]))),
        ("square", vec![r(3, 4)], Box::new(|t, v| t.square(v[0]))),
        ("sum", vec![r(3, 4)], Box::new(|t, v| t.sum(v[0]))),
        ("sum_axis0", vec![r(3, 4)], Box::new(|t, v| t.sum_axis(v[0], 0))),
        ("sum_axis1", vec![r(3, 4)], Box::new(|t, v| t.sum_axis(v[0], 1))),
        ("mean", vec![r(3, 4)], Box::new(|t, v| t.mean(v[0]))),
        ("gather", vec![r(4, 3)], Box::new(|t, v| t.gather(v[0], &[2, 0, 2, 3]))),
        ("scatter_max", vec![r(6, 3)], Box::new(|t, v| t.scatter_max(v[0], &[0, 2, 0, 1, 2, 2], 4))),
        ("sq_dist", vec![r(4, 3), r(5, 3)], Box::new(|t, v| t.sq_dist(v[0], v[1]))),
    ];
    for (name, inputs, op) in cases {
        check(name, inputs, op.as_ref());
    }
    // Ops with restricted domains.
    let pos = |rng: &mut ChaCha8Rng| random(3, 4, 0.5, 1.5, rng);
    check("log", vec![pos(&mut rng)], &|t, v| t.log(v[0]));
    check("sqrt", vec![pos(&mut rng)], &|t, v| t.sqrt(v[0]));
    check("div_col", vec![random(3, 4, -1.0, 1.0, &mut rng), random(3, 1, 0.5, 1.5, &mut rng)], &|t, v| {
        t.div_col(v[0], v[1])
    });
}

#[test]
fn trivial_values() {
    let mut t = Tape::new();
    let z = t.constant(Tensor::scalar(0.0)).unwrap();
    let s = t.sigmoid(z).unwrap();
    assert_eq!(t.value(s).item(), 0.5);

    let a = t.constant(Tensor::row(&[0.7, 0.7, 0.7])).unwrap();
    let sm = t.softmax(a, 1).unwrap();
    for &v in t.value(sm).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    let row = Tensor::row(&[0.1, -2.0, 3.0]);
    let r = t.constant(row.clone()).unwrap();
    let m = t.max_reduce(r, 0).unwrap();
    assert_eq!(t.value(m), &row);
}

#[test]
fn square_and_sigmoid_gradients() {
    let mut t = Tape::new();
    let x = t.leaf("x", Tensor::scalar(3.0)).unwrap();
    let y = t.square(x).unwrap();
    let g = t.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().item(), 6.0);

    let mut t = Tape::new();
    let x = t.leaf("x", Tensor::zeros(2, 3)).unwrap();
    let s = t.sigmoid(x).unwrap();
    let l = t.sum(s).unwrap();
    let g = t.backward(l).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.25));
}

#[test]
fn max_reduce_ties_route_to_first_index() {
    let mut t = Tape::new();
    let x = t.leaf("x", Tensor::from_rows(&[[1.0, 5.0], [1.0, 5.0], [0.0, 5.0]])).unwrap();
    let m = t.max_reduce(x, 0).unwrap();
    let l = t.sum(m).unwrap();
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut t = Tape::new();
    let x = t.leaf("x", Tensor::zeros(2, 2)).unwrap();
    assert!(matches!(t.backward(x), Err(AutodiffError::NonScalarLoss([2, 2]))));
}

#[test]
fn non_finite_outputs_are_errors() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::row(&[0.0, 1.0])).unwrap();
    assert!(matches!(t.log(x), Err(AutodiffError::NonFinite { .. })));
}

#[test]
fn unreachable_params_get_zero() {
    let mut store = ParamStore::new();
    store.insert("a", Tensor::scalar(2.0)).unwrap();
    store.insert("b", Tensor::zeros(2, 2)).unwrap();
    let mut t = Tape::new();
    let a = t.param(&store, "a").unwrap();
    let l = t.square(a).unwrap();
    let grads = t.backward(l).unwrap().for_store(&store);
    assert_eq!(grads["a"].item(), 4.0);
    assert_eq!(grads["b"], Tensor::zeros(2, 2));
}

fn mlp_store(rng: &mut ChaCha8Rng) -> ParamStore {
    let mut s = ParamStore::new();
    for (i, (fi, fo)) in [(3, 8), (8, 6), (6, 2)].into_iter().enumerate() {
        s.insert(format!("w{i}"), Tensor::glorot(fi, fo, rng)).unwrap();
        s.insert(format!("b{i}"), Tensor::uniform(1, fo, -0.1, 0.1, rng)).unwrap();
    }
    s
}

fn mlp_loss(tape: &mut Tape, s: &ParamStore, x: &Tensor) -> Result<Var, AutodiffError> {
    let mut h = tape.constant(x.clone())?;
    for i in 0..3 {
        let w = tape.param(s, &format!("w{i}"))?;
        let b = tape.param(s, &format!("b{i}"))?;
        let z = tape.matmul(h, w)?;
        h = tape.add_row(z, b)?;
        if i < 2 {
            h = tape.leaky_relu(h, 0.2)?;
        }
    }
    let sq = tape.square(h)?;
    tape.mean(sq)
}

#[test]
fn three_layer_mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let store = mlp_store(&mut rng);
    let x = Tensor::uniform(5, 3, -1.0, 1.0, &mut rng);
    let report = GradCheck::default().run(&store, &mut rng, |t, s| mlp_loss(t, s, &x)).unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn tape_replay_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let store = mlp_store(&mut rng);
    let x = Tensor::uniform(7, 3, -1.0, 1.0, &mut rng);
    let run = || {
        let mut t = Tape::new();
        let l = mlp_loss(&mut t, &store, &x).unwrap();
        let g = t.backward(l).unwrap().for_store(&store);
        let mut flat: Vec<u64> = vec![t.value(l).item().to_bits()];
        for (name, _) in store.iter() {
            flat.extend(g[name].data().iter().map(|v| v.to_bits()));
        }
        flat
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_descends_a_quadratic_bowl() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let center: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.25..0.25)).collect();
    let mut store = ParamStore::new();
    store.insert("p", Tensor::uniform(1, 4, -0.25, 0.25, &mut rng)).unwrap();
    let c = Tensor::row(&center);
    let loss_of = |store: &ParamStore| -> (f64, rigforge_core::autodiff::GradMap) {
        let mut t = Tape::new();
        let p = t.param(store, "p").unwrap();
        let cv = t.constant(c.clone()).unwrap();
        let d = t.sub(p, cv).unwrap();
        let sq = t.square(d).unwrap();
        let l = t.sum(sq).unwrap();
        (t.value(l).item(), t.backward(l).unwrap().for_store(store))
    };
    let cfg = AdamConfig::with_lr(1e-2);
    for _ in 0..200 {
        let (_, g) = loss_of(&store);
        adam_step(&mut store, &g, &cfg).unwrap();
    }
    let (final_loss, _) = loss_of(&store);
    assert!(final_loss < 1e-4, "{final_loss}");
}
