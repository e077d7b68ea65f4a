use proptest::prelude::*;
use voicelink_autodiff::{grad_check, AdamW, AdamWConfig, GradCheckOptions, Index, ParamStore, Tape, Tensor, Var};

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |d| Tensor::from_vec(rows, cols, d).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=8, 1usize..=8)
}

/// `sum(f(x) * w)` for a fixed weighting `w`.
fn check(inputs: Vec<Tensor>, weights: Tensor, f: impl Fn(&mut Tape, &[Var]) -> voicelink_autodiff::Result<Var>) -> f64 {
    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs.into_iter().enumerate().map(|(i, x)| store.add(format!("x{i}"), x)).collect();
    grad_check(
        &mut store,
        |t, s| {
            let vars: Vec<_> = ids.iter().map(|&id| t.param(s, id)).collect();
            let out = f(t, &vars)?;
            let w = t.constant(weights.clone());
            let y = t.mul(out, w)?;
            t.sum(y)
        },
        GradCheckOptions::default(),
    )
    .unwrap()
    .max_rel_error
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_any_shape(
        (a, b, w) in (1usize..=8, 1usize..=8, 1usize..=8)
            .prop_flat_map(|(n, k, m)| (matrix(n, k, -2.0, 2.0), matrix(k, m, -2.0, 2.0), matrix(n, m, -1.0, 1.0)))
    ) {
        prop_assert!(check(vec![a, b], w, |t, v| t.matmul(v[0], v[1])) < 1e-4);
    }

    #[test]
    fn smooth_elementwise_any_shape(
        (x, w) in dims().prop_flat_map(|(r, c)| (matrix(r, c, -3.0, 3.0), matrix(r, c, -1.0, 1.0))),
        op in 0usize..4,
    ) {
        let err = check(vec![x], w, move |t, v| match op {
            0 => t.sigmoid(v[0]),
            1 => t.tanh(v[0]),
            2 => t.square(v[0]),
            _ => t.softmax_rows(v[0]),
        });
        prop_assert!(err < 1e-4);
    }

    #[test]
    fn positive_domain_any_shape(
        (x, w) in dims().prop_flat_map(|(r, c)| (matrix(r, c, 0.2, 3.0), matrix(r, c, -1.0, 1.0))),
        op in 0usize..3,
    ) {
        let err = check(vec![x], w, move |t, v| match op {
            0 => t.sqrt(v[0]),
            1 => t.ln(v[0]),
            _ => t.recip(v[0]),
        });
        prop_assert!(err < 1e-4);
    }

    #[test]
    fn broadcasts_any_shape(
        (a, row, col, w) in dims().prop_flat_map(|(r, c)| (
            matrix(r, c, -2.0, 2.0), matrix(1, c, -2.0, 2.0), matrix(r, 1, -2.0, 2.0), matrix(r, c, -1.0, 1.0)
        )),
    ) {
        let err = check(vec![a, row, col], w, |t, v| {
            let x = t.add_row(v[0], v[1])?;
            let x = t.add_col(x, v[2])?;
            t.mul_col(x, v[2])
        });
        prop_assert!(err < 1e-4);
    }

    #[test]
    fn gather_scatter_any_index(
        (x, index, out_rows) in (1usize..=8, 1usize..=8, 1usize..=8).prop_flat_map(|(r, c, out)| (
            matrix(r, c, -2.0, 2.0),
            prop::collection::vec(0..r, 1..=8),
            Just(out.max(r)),
        )),
    ) {
        let idx: Index = index.clone().into();
        let cols = x.cols();
        let w = Tensor::from_vec(out_rows, cols, (0..out_rows * cols).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let err = check(vec![x], w, move |t, v| {
            let g = t.gather_rows(v[0], &idx)?;
            t.scatter_add_rows(g, &idx, out_rows)
        });
        prop_assert!(err < 1e-4);
    }

    #[test]
    fn backward_is_linear_in_the_loss(x in matrix(3, 4, -2.0, 2.0), a in -5.0f64..5.0) {
        let grads = |factor: f64| {
            let mut tape = Tape::new();
            let v = tape.input(x.clone());
            let y = tape.tanh(v).unwrap();
            let y = tape.square(y).unwrap();
            let s = tape.sum(y).unwrap();
            let s = tape.scale(s, factor).unwrap();
            tape.backward(s).unwrap().get(v).unwrap().clone()
        };
        let (g1, ga) = (grads(1.0), grads(a));
        for (p, q) in g1.data().iter().zip(ga.data()) {
            prop_assert!((a * p - q).abs() <= 1e-12 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn adamw_step_is_deterministic(x in matrix(2, 3, -1.0, 1.0), g in matrix(2, 3, -1.0, 1.0)) {
        let run = || {
            let mut store = ParamStore::new();
            let id = store.add("w", x.clone());
            let mut opt = AdamW::for_params(AdamWConfig::default(), &store);
            for _ in 0..3 {
                *store.grad_mut(id) = g.clone();
                opt.step(&mut store).unwrap();
            }
            store.value(id).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}
