//! Central finite-difference oracle for reverse-mode gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::ParamStore;
use crate::tape::{Index, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub eps: f64,
    /// Denominator floor for the relative error, so that near-zero
    /// gradients are compared absolutely. It is multiplied by
    /// `max(1, |loss|)`, since finite-difference roundoff grows with the
    /// loss magnitude.
    pub floor: f64,
    /// Check at most this many randomly chosen entries per parameter.
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            floor: 1e-6,
            max_entries_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst entry.
    pub worst_values: Option<(f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares the tape gradient of `loss_fn` with central differences over
/// the parameters in `store`. Existing gradients in `store` are cleared.
pub fn grad_check<F>(store: &mut ParamStore, loss_fn: F, options: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    tape.backward(loss)?.accumulate_into(store);
    let floor = options.floor * tape.value(loss).item().abs().max(1.0);

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, store)?;
        Ok(tape.value(loss).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
        worst_values: None,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        let entries: Vec<usize> = match options.max_entries_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in entries {
            let original = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = original + options.eps;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = original - options.eps;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * options.eps);
            let analytic = store.grad(id).data()[i];
            let denom = analytic.abs().max(numeric.abs()).max(floor);
            let err = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), i));
                report.worst_values = Some((analytic, numeric));
            }
        }
    }
    Ok(report)
}

/// Runs [`grad_check`] on every tape primitive, each reduced to a scalar
/// through a fixed random weighting. Inputs are drawn away from the kinks
/// of `relu`, `clamp` and `sqrt`, and kept positive where `ln` and `recip`
/// need it.
pub fn check_primitives(seed: u64, options: GradCheckOptions) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let away_from_zero = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        let data = (0..rows * cols)
            .map(|_| {
                let v: f64 = rng.gen_range(0.1..1.5);
                if rng.gen_bool(0.5) { v } else { -v }
            })
            .collect();
        Tensor::from_vec(rows, cols, data).expect("shape matches")
    };
    let positive = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        let data = (0..rows * cols).map(|_| rng.gen_range(0.3..2.0)).collect();
        Tensor::from_vec(rows, cols, data).expect("shape matches")
    };

    type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;
    let index: Index = vec![2, 0, 2, 1, 3].into();
    let (i1, i2) = (index.clone(), index.clone());
    let cases: Vec<(&'static str, Vec<Tensor>, Build)> = vec![
        ("matmul", vec![away_from_zero(3, 4, &mut rng), away_from_zero(4, 2, &mut rng)], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("add", vec![away_from_zero(3, 2, &mut rng), away_from_zero(3, 2, &mut rng)], Box::new(|t, v| t.add(v[0], v[1]))),
        ("sub", vec![away_from_zero(3, 2, &mut rng), away_from_zero(3, 2, &mut rng)], Box::new(|t, v| t.sub(v[0], v[1]))),
        ("mul", vec![away_from_zero(3, 2, &mut rng), away_from_zero(3, 2, &mut rng)], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("add_row", vec![away_from_zero(3, 2, &mut rng), away_from_zero(1, 2, &mut rng)], Box::new(|t, v| t.add_row(v[0], v[1]))),
        ("add_col", vec![away_from_zero(3, 2, &mut rng), away_from_zero(3, 1, &mut rng)], Box::new(|t, v| t.add_col(v[0], v[1]))),
        ("mul_col", vec![away_from_zero(3, 2, &mut rng), away_from_zero(3, 1, &mut rng)], Box::new(|t, v| t.mul_col(v[0], v[1]))),
        ("scale", vec![away_from_zero(3, 2, &mut rng)], Box::new(|t, v| t.scale(v[0], -1.7))),
        ("add_scalar", vec![away_from_zero(3, 2, &mut rng)], Box::new(|t, v| t.add_scalar(v[0], 0.3))),
        ("sigmoid", vec![away_from_zero(3, 2, &mut rng)], Box::new(|t, v| t.sigmoid(v[0]))),
        ("tanh", vec![away_from_zero(3, 2, &mut rng)], Box::new(|t, v| t.tanh(v[0]))),
        ("relu", vec![away_from_zero(3, 2, &mut rng)], Box::new(|t, v| t.relu(v[0]))),
        ("square", vec![away_from_zero(3, 2, &mut rng)], Box::new(|t, v| t.square(v[0]))),
        ("sqrt", vec![positive(3, 2, &mut rng)], Box::new(|t, v| t.sqrt(v[0]))),
        ("ln", vec![positive(3, 2, &mut rng)], Box::new(|t, v| t.ln(v[0]))),
        ("recip", vec![positive(3, 2, &mut rng)], Box::new(|t, v| t.recip(v[0]))),
        ("clamp", vec![away_from_zero(3, 2, &mut rng)], Box::new(|t, v| t.clamp(v[0], -1.0, 1.0))),
        ("softmax_rows", vec![away_from_zero(3, 4, &mut rng)], Box::new(|t, v| t.softmax_rows(v[0]))),
        ("concat_cols", vec![away_from_zero(3, 2, &mut rng), away_from_zero(3, 1, &mut rng)], Box::new(|t, v| t.concat_cols(&[v[0], v[1]]))),
        ("narrow_cols", vec![away_from_zero(3, 4, &mut rng)], Box::new(|t, v| t.narrow_cols(v[0], 1, 2))),
        ("gather_rows", vec![away_from_zero(4, 2, &mut rng)], Box::new(move |t, v| t.gather_rows(v[0], &i1))),
        ("scatter_add_rows", vec![away_from_zero(5, 2, &mut rng)], Box::new(move |t, v| t.scatter_add_rows(v[0], &i2, 4))),
        ("sum", vec![away_from_zero(3, 2, &mut rng)], Box::new(|t, v| t.sum(v[0]))),
        ("mean", vec![away_from_zero(3, 2, &mut rng)], Box::new(|t, v| t.mean(v[0]))),
        ("sum_rows", vec![away_from_zero(3, 2, &mut rng)], Box::new(|t, v| t.sum_rows(v[0]))),
        ("sum_cols", vec![away_from_zero(3, 2, &mut rng)], Box::new(|t, v| t.sum_cols(v[0]))),
        ("l2_norm", vec![away_from_zero(3, 2, &mut rng)], Box::new(|t, v| t.l2_norm(v[0]))),
    ];

    let mut reports = Vec::with_capacity(cases.len());
    for (name, inputs, build) in cases {
        let mut store = ParamStore::new();
        let ids: Vec<_> = inputs.into_iter().enumerate().map(|(i, x)| store.add(format!("x{i}"), x)).collect();
        // The weighting depends only on the output shape, so draw it once.
        let probe = {
            let mut tape = Tape::new();
            let vars: Vec<_> = ids.iter().map(|&id| tape.param(&store, id)).collect();
            let out = build(&mut tape, &vars)?;
            tape.shape(out)
        };
        let weights = away_from_zero(probe.0, probe.1, &mut rng);
        let report = grad_check(
            &mut store,
            |tape, s| {
                let vars: Vec<_> = ids.iter().map(|&id| tape.param(s, id)).collect();
                let out = build(tape, &vars)?;
                let w = tape.constant(weights.clone());
                let weighted = tape.mul(out, w)?;
                tape.sum(weighted)
            },
            options,
        )?;
        reports.push((name, report));
    }
    Ok(reports)
}
