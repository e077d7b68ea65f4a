//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every primitive as it is evaluated. Calling
//! [`Tape::backward`] on a `1x1` result walks the record in reverse and
//! produces the gradient of every node that depends on a trainable leaf.
//! Message passing is expressed through [`Tape::gather_rows`] and
//! [`Tape::scatter_add_rows`] over shared index lists.

use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

/// Shared row-index list for gather and scatter primitives.
pub type Index = Arc<[usize]>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Square(Var),
    Sqrt(Var),
    Ln(Var),
    Recip(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    NarrowCols(Var, usize),
    GatherRows(Var, Index),
    ScatterAddRows(Var, Index),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    L2Norm(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a computation for later differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf whose gradient is reported by [`Tape::backward`] but that is not
    /// owned by a [`ParamStore`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Leaf bound to a trainable parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        if cfg!(debug_assertions)
            && !value.is_finite()
            && inputs.iter().all(|v| self.nodes[v.0].value.is_finite())
        {
            return Err(TensorError::Contract(format!(
                "non-finite output from finite inputs in {op:?}"
            )));
        }
        Ok(self.push(value, op, needs_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::Shape { op, lhs: sa, rhs: sb });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.derived(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.derived(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.derived(value, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.derived(value, Op::Mul(a, b), &[a, b])
    }

    /// `a (n x c) + row (1 x c)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(TensorError::Shape { op: "add_row", lhs: sa, rhs: sr });
        }
        let mut value = self.value(a).clone();
        let bias = self.value(row).data().to_vec();
        for r in 0..sa.0 {
            for (x, b) in value.row_mut(r).iter_mut().zip(&bias) {
                *x += b;
            }
        }
        self.derived(value, Op::AddRow(a, row), &[a, row])
    }

    /// `a (n x c) + col (n x 1)` broadcast over columns.
    pub fn add_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (sa, sc) = (self.shape(a), self.shape(col));
        if sc != (sa.0, 1) {
            return Err(TensorError::Shape { op: "add_col", lhs: sa, rhs: sc });
        }
        let mut value = self.value(a).clone();
        for r in 0..sa.0 {
            let s = self.value(col).data()[r];
            value.row_mut(r).iter_mut().for_each(|x| *x += s);
        }
        self.derived(value, Op::AddCol(a, col), &[a, col])
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (sa, sc) = (self.shape(a), self.shape(col));
        if sc != (sa.0, 1) {
            return Err(TensorError::Shape { op: "mul_col", lhs: sa, rhs: sc });
        }
        let mut value = self.value(a).clone();
        for r in 0..sa.0 {
            let s = self.value(col).data()[r];
            value.row_mut(r).iter_mut().for_each(|x| *x *= s);
        }
        self.derived(value, Op::MulCol(a, col), &[a, col])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * factor);
        self.derived(value, Op::Scale(a, factor), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, shift: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x + shift);
        self.derived(value, Op::AddScalar(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.derived(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        self.derived(value, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.derived(value, Op::Relu(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x * x);
        self.derived(value, Op::Square(a), &[a])
    }

    /// Square root of nonnegative entries. The derivative at 0 is taken as 0,
    /// which keeps exact zeros exact in forward values.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(&x) = self.value(a).data().iter().find(|&&x| x < 0.0) {
            return Err(TensorError::Contract(format!("sqrt of negative value {x}")));
        }
        let value = self.value(a).map(f64::sqrt);
        self.derived(value, Op::Sqrt(a), &[a])
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::ln);
        self.derived(value, Op::Ln(a), &[a])
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| 1.0 / x);
        self.derived(value, Op::Recip(a), &[a])
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.derived(value, Op::Clamp(a, lo, hi), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            row.iter_mut().for_each(|x| *x /= total);
        }
        self.derived(value, Op::SoftmaxRows(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Contract("concat_cols of nothing".into()));
        };
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(TensorError::Shape { op: "concat_cols", lhs: self.shape(first), rhs: s });
            }
            cols += s.1;
        }
        let mut value = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            value.put_cols(offset, self.value(p));
            offset += self.shape(p).1;
        }
        self.derived(value, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Columns `start..start + len` of `a`.
    pub fn narrow_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if start + len > cols {
            return Err(TensorError::Index { op: "narrow_cols", index: start + len, bound: cols });
        }
        let src = self.value(a);
        let mut value = Tensor::zeros(rows, len);
        for r in 0..rows {
            value.row_mut(r).copy_from_slice(&src.row(r)[start..start + len]);
        }
        self.derived(value, Op::NarrowCols(a, start), &[a])
    }

    /// Row `i` of the result is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: &Index) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        let src = self.value(a);
        let mut value = Tensor::zeros(index.len(), cols);
        for (i, &j) in index.iter().enumerate() {
            if j >= rows {
                return Err(TensorError::Index { op: "gather_rows", index: j, bound: rows });
            }
            value.row_mut(i).copy_from_slice(src.row(j));
        }
        self.derived(value, Op::GatherRows(a, index.clone()), &[a])
    }

    /// Sums row `i` of `a` into row `index[i]` of an `out_rows x c` zero matrix.
    pub fn scatter_add_rows(&mut self, a: Var, index: &Index, out_rows: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if rows != index.len() {
            return Err(TensorError::Shape { op: "scatter_add_rows", lhs: (rows, cols), rhs: (index.len(), 1) });
        }
        let src = self.value(a);
        let mut value = Tensor::zeros(out_rows, cols);
        for (i, &j) in index.iter().enumerate() {
            if j >= out_rows {
                return Err(TensorError::Index { op: "scatter_add_rows", index: j, bound: out_rows });
            }
            for (d, s) in value.row_mut(j).iter_mut().zip(src.row(i)) {
                *d += s;
            }
        }
        self.derived(value, Op::ScatterAddRows(a, index.clone()), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.derived(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(TensorError::Contract("mean of empty tensor".into()));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Per-row sums as an `n x 1` column.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let value = Tensor::column((0..src.rows()).map(|r| src.row(r).iter().sum()).collect());
        self.derived(value, Op::SumRows(a), &[a])
    }

    /// Per-column sums as a `1 x c` row.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let mut value = Tensor::zeros(1, src.cols());
        for r in 0..src.rows() {
            for (d, s) in value.data_mut().iter_mut().zip(src.row(r)) {
                *d += s;
            }
        }
        self.derived(value, Op::SumCols(a), &[a])
    }

    /// Frobenius norm; the derivative at the origin is taken as 0.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let norm = self.value(a).data().iter().map(|x| x * x).sum::<f64>().sqrt();
        self.derived(Tensor::scalar(norm), Op::L2Norm(a), &[a])
    }

    /// Reverse pass from a `1x1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self
                .nodes
                .iter()
                .enumerate()
                .filter_map(|(i, n)| match n.op {
                    Op::Param(p) if i <= loss.0 => Some((i, p)),
                    _ => None,
                })
                .collect(),
        })
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, t: Tensor| accumulate(grads, v, t);
        match &node.op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    let mut ga = Tensor::zeros(val(*a).rows(), val(*a).cols());
                    gemm(false, true, g, val(*b), &mut ga, 0.0);
                    acc(*a, ga);
                }
                if wants(*b) {
                    let mut gb = Tensor::zeros(val(*b).rows(), val(*b).cols());
                    gemm(true, false, val(*a), g, &mut gb, 0.0);
                    acc(*b, gb);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    acc(*a, g.clone());
                }
                if wants(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    acc(*a, g.clone());
                }
                if wants(*b) {
                    acc(*b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    acc(*a, g.zip_map(val(*b), |x, y| x * y));
                }
                if wants(*b) {
                    acc(*b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::AddRow(a, row) => {
                if wants(*a) {
                    acc(*a, g.clone());
                }
                if wants(*row) {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, s) in gr.data_mut().iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                    acc(*row, gr);
                }
            }
            Op::AddCol(a, col) => {
                if wants(*a) {
                    acc(*a, g.clone());
                }
                if wants(*col) {
                    acc(*col, Tensor::column((0..g.rows()).map(|r| g.row(r).iter().sum()).collect()));
                }
            }
            Op::MulCol(a, col) => {
                let c = val(*col).data();
                if wants(*a) {
                    let mut ga = g.clone();
                    for (r, s) in c.iter().enumerate() {
                        ga.row_mut(r).iter_mut().for_each(|x| *x *= s);
                    }
                    acc(*a, ga);
                }
                if wants(*col) {
                    let av = val(*a);
                    let gc = (0..g.rows())
                        .map(|r| g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum())
                        .collect();
                    acc(*col, Tensor::column(gc));
                }
            }
            Op::Scale(a, f) => acc(*a, g.map(|x| x * f)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Sigmoid(a) => acc(*a, g.zip_map(y, |g, s| g * s * (1.0 - s))),
            Op::Tanh(a) => acc(*a, g.zip_map(y, |g, t| g * (1.0 - t * t))),
            Op::Relu(a) => acc(*a, g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 })),
            Op::Square(a) => acc(*a, g.zip_map(val(*a), |g, x| 2.0 * x * g)),
            Op::Sqrt(a) => acc(*a, g.zip_map(y, |g, s| if s > 0.0 { 0.5 * g / s } else { 0.0 })),
            Op::Ln(a) => acc(*a, g.zip_map(val(*a), |g, x| g / x)),
            Op::Recip(a) => acc(*a, g.zip_map(y, |g, r| -g * r * r)),
            Op::Clamp(a, lo, hi) => acc(
                *a,
                g.zip_map(val(*a), |g, x| if x >= *lo && x <= *hi { g } else { 0.0 }),
            ),
            Op::SoftmaxRows(a) => {
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(g, s)| g * s).sum();
                    for ((d, gi), si) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *d = si * (gi - dot);
                    }
                }
                acc(*a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = val(p).shape();
                    if wants(p) {
                        let mut gp = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        acc(p, gp);
                    }
                    offset += cols;
                }
            }
            Op::NarrowCols(a, start) => {
                let (rows, cols) = val(*a).shape();
                let mut ga = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*a, ga);
            }
            Op::GatherRows(a, index) => {
                let (rows, cols) = val(*a).shape();
                let mut ga = Tensor::zeros(rows, cols);
                for (i, &j) in index.iter().enumerate() {
                    for (d, s) in ga.row_mut(j).iter_mut().zip(g.row(i)) {
                        *d += s;
                    }
                }
                acc(*a, ga);
            }
            Op::ScatterAddRows(a, index) => {
                let mut ga = Tensor::zeros(index.len(), g.cols());
                for (i, &j) in index.iter().enumerate() {
                    ga.row_mut(i).copy_from_slice(g.row(j));
                }
                acc(*a, ga);
            }
            Op::Sum(a) => {
                let (rows, cols) = val(*a).shape();
                acc(*a, Tensor::full(rows, cols, g.item()));
            }
            Op::SumRows(a) => {
                let (rows, cols) = val(*a).shape();
                let mut ga = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let s = g.data()[r];
                    ga.row_mut(r).iter_mut().for_each(|x| *x = s);
                }
                acc(*a, ga);
            }
            Op::SumCols(a) => {
                let (rows, cols) = val(*a).shape();
                let mut ga = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    ga.row_mut(r).copy_from_slice(g.data());
                }
                acc(*a, ga);
            }
            Op::L2Norm(a) => {
                let norm = y.item();
                let scale = if norm > 0.0 { g.item() / norm } else { 0.0 };
                acc(*a, val(*a).map(|x| x * scale));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds parameter gradients into the store's gradient slots.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(node, id) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.grad_mut(id).add_assign(g);
            }
        }
    }
}
