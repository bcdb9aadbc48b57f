use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smattn_core::numeric::{
    grad_check, masked_softmax_rows, matmul, scaled_softplus_scalar, NumArray, ParamStore, Tape,
    Var,
};
use smattn_core::Result;

fn random_array(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> NumArray {
    let v = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
    NumArray::new(vec![rows, cols], v).unwrap()
}

fn naive_matmul(a: &NumArray, b: &NumArray) -> Vec<f64> {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for p in 0..k {
                s += a.get(i, p) * b.get(p, j);
            }
            out[i * m + j] = s;
        }
    }
    out
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_array(&mut rng, 5, 7);
    let b = random_array(&mut rng, 7, 3);
    let c = matmul(&a, &b).unwrap();
    for (x, y) in c.values().iter().zip(naive_matmul(&a, &b)) {
        assert!((x - y).abs() < 1e-12);
    }
}

/// Scalar readout `Σ r ⊙ op(inputs)` with fixed random weights `r`.
fn check_primitive(
    inputs: Vec<(&str, NumArray)>,
    out_shape: (usize, usize),
    seed: u64,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = random_array(&mut rng, out_shape.0, out_shape.1);
    let mut params = ParamStore::new();
    let names: Vec<String> = inputs.iter().map(|(n, _)| n.to_string()).collect();
    for (n, v) in inputs {
        params.insert(n, v);
    }
    let report = grad_check(
        |p, t| {
            let vars: Vec<Var> = names.iter().map(|n| t.param(n, p.get(n).unwrap())).collect();
            let out = build(t, &vars)?;
            let w = t.constant(weights.clone());
            let prod = t.mul(out, w)?;
            t.sum(prod)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(
        report.worst_rel_error < 1e-4,
        "worst {} at {}",
        report.worst_rel_error,
        report.worst_param
    );
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..5u64 {
        let a = random_array(&mut rng, 3, 4);
        let b = random_array(&mut rng, 4, 2);
        let c = random_array(&mut rng, 3, 4);
        let row = random_array(&mut rng, 1, 4);
        let col = random_array(&mut rng, 3, 1);
        let pos = random_array(&mut rng, 3, 4).map(|v| v.abs() + 0.5);
        let phi = random_array(&mut rng, 1, 4).map(|v| v.abs() + 0.2);

        check_primitive(vec![("a", a.clone()), ("b", b.clone())], (3, 2), trial, |t, v| {
            t.matmul(v[0], v[1])
        });
        check_primitive(vec![("a", a.clone()), ("c", c.clone())], (3, 3), trial, |t, v| {
            t.matmul_nt(v[0], v[1])
        });
        check_primitive(vec![("a", a.clone()), ("c", c.clone())], (3, 4), trial, |t, v| {
            t.add(v[0], v[1])
        });
        check_primitive(vec![("a", a.clone()), ("c", c.clone())], (3, 4), trial, |t, v| {
            t.mul(v[0], v[1])
        });
        check_primitive(vec![("a", a.clone()), ("r", row.clone())], (3, 4), trial, |t, v| {
            t.add_row(v[0], v[1])
        });
        check_primitive(
            vec![("a", a.clone()), ("col", col.clone()), ("r", row.clone())],
            (3, 4),
            trial,
            |t, v| t.add_outer(v[0], v[1], v[2]),
        );
        check_primitive(vec![("a", a.clone())], (3, 4), trial, |t, v| t.scale(v[0], -1.7));
        check_primitive(vec![("a", a.clone())], (3, 4), trial, |t, v| t.add_scalar(v[0], 0.3));
        check_primitive(vec![("a", a.clone())], (3, 4), trial, |t, v| t.tanh(v[0]));
        check_primitive(vec![("a", a.clone())], (3, 4), trial, |t, v| t.exp(v[0]));
        check_primitive(vec![("p", pos.clone())], (3, 4), trial, |t, v| t.ln(v[0]));
        check_primitive(vec![("a", a.clone())], (3, 4), trial, |t, v| t.log_sigmoid(v[0]));
        check_primitive(vec![("a", a.clone()), ("phi", phi.clone())], (3, 4), trial, |t, v| {
            t.scaled_softplus(v[0], v[1])
        });
        let mask: Vec<bool> = (0..12).map(|i| i % 4 <= i / 4 + 1).collect();
        check_primitive(vec![("a", a.clone())], (3, 4), trial, move |t, v| {
            t.masked_softmax_rows(v[0], mask.clone())
        });
        check_primitive(vec![("a", a.clone()), ("c", c.clone())], (3, 8), trial, |t, v| {
            t.concat_cols(v[0], v[1])
        });
        check_primitive(vec![("a", a.clone()), ("c", c.clone())], (6, 4), trial, |t, v| {
            t.concat_rows(v[0], v[1])
        });
        check_primitive(vec![("a", a.clone())], (4, 4), trial, |t, v| {
            t.gather_rows(v[0], vec![2, 0, 2, 1])
        });
        check_primitive(vec![("a", a.clone()), ("r", row.clone())], (3, 2), trial, |t, v| {
            t.block_dot(v[0], v[1], 2)
        });
        check_primitive(vec![("a", a.clone())], (3, 1), trial, |t, v| t.row_sum(v[0]));
        check_primitive(vec![("a", a.clone())], (1, 1), trial, |t, v| t.sum(v[0]));
        check_primitive(vec![("a", a.clone())], (1, 3), trial, |t, v| {
            t.pick(v[0], vec![(0, 1), (2, 3), (0, 1)])
        });
    }
}

#[test]
fn softmax_rows_are_stochastic_with_exact_zeros() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let rows = rng.gen_range(1..6);
        let cols = rng.gen_range(1..8);
        let scores = NumArray::new(
            vec![rows, cols],
            (0..rows * cols).map(|_| rng.gen_range(-30.0..30.0)).collect(),
        )
        .unwrap();
        let mut mask: Vec<bool> = (0..rows * cols).map(|_| rng.gen_bool(0.6)).collect();
        for r in 0..rows {
            let keep = rng.gen_range(0..cols);
            mask[r * cols + keep] = true;
        }
        let p = masked_softmax_rows(&scores, &mask).unwrap();
        for r in 0..rows {
            let row = p.row(r);
            let total: f64 = row.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            for c in 0..cols {
                if mask[r * cols + c] {
                    assert!(row[c] > 0.0 || scores.get(r, c) < -29.0);
                } else {
                    assert_eq!(row[c], 0.0);
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn softplus_is_positive(x in -700.0f64..700.0, phi in 1e-3f64..10.0) {
        prop_assert!(scaled_softplus_scalar(x, phi) > 0.0);
    }

    #[test]
    fn softplus_is_monotone(x in -50.0f64..50.0, dx in 0.0f64..5.0, phi in 1e-2f64..5.0) {
        prop_assert!(scaled_softplus_scalar(x + dx, phi) >= scaled_softplus_scalar(x, phi));
    }

    #[test]
    fn softplus_approaches_relu(x in -10.0f64..10.0) {
        let f = scaled_softplus_scalar(x, 1e-6);
        prop_assert!((f - x.max(0.0)).abs() < 1e-4);
    }
}

#[test]
fn forward_and_gradients_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let a = random_array(&mut rng, 4, 4);
        let mut t = Tape::new();
        let va = t.param("a", &a);
        let s = t.matmul_nt(va, va).unwrap();
        let p = t.masked_softmax_rows(s, smattn_core::numeric::causal_mask(4)).unwrap();
        let h = t.matmul(p, va).unwrap();
        let y = t.tanh(h).unwrap();
        let out = t.sum(y).unwrap();
        let g = t.backward(out).unwrap();
        (t.value(out).item().to_bits(), g)
    };
    let (v1, g1) = run();
    let (v2, g2) = run();
    assert_eq!(v1, v2);
    for ((_, a), (_, b)) in g1.iter().zip(g2.iter()) {
        let ab: Vec<u64> = a.values().iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u64> = b.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(ab, bb);
    }
}
