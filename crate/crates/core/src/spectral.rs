//! Low end of the symmetric normalized Laplacian spectrum.
//!
//! `L = D^{-1/2} (D - A) D^{-1/2}` with `D^{-1/2} = 0` at isolated nodes, so
//! isolated nodes have an all-zero row and contribute to the nullspace.
//! Small graphs use a dense symmetric decomposition; large ones run
//! Lanczos with full reorthogonalization on `2I - L` after deflating the
//! known nullspace (one `D^{1/2} 1_C` vector per connected component plus
//! one unit vector per isolated node).

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Eigenvalues below this are treated as nullspace.
pub const NULL_TOL: f64 = 1e-8;
/// Largest admissible `||Lx - lambda x||_2` for a returned pair.
pub const RESIDUAL_TOL: f64 = 1e-6;

/// Sparse normalized Laplacian in adjacency-list form.
#[derive(Debug, Clone)]
pub struct NormalizedLaplacian {
    neighbours: Vec<Vec<usize>>,
    inv_sqrt_degree: Vec<f64>,
}

impl NormalizedLaplacian {
    /// Collapses `edges` into an undirected simple graph.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut neighbours = vec![Vec::new(); n];
        for (u, v) in edges {
            if u != v {
                neighbours[u].push(v);
                neighbours[v].push(u);
            }
        }
        for list in &mut neighbours {
            list.sort_unstable();
            list.dedup();
        }
        let inv_sqrt_degree = neighbours
            .iter()
            .map(|l| if l.is_empty() { 0.0 } else { 1.0 / (l.len() as f64).sqrt() })
            .collect();
        Self {
            neighbours,
            inv_sqrt_degree,
        }
    }

    pub fn len(&self) -> usize {
        self.neighbours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbours.is_empty()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, list) in self.neighbours.iter().enumerate() {
            if list.is_empty() {
                out[i] = 0.0;
                continue;
            }
            let s: f64 = list.iter().map(|&j| self.inv_sqrt_degree[j] * x[j]).sum();
            out[i] = x[i] - self.inv_sqrt_degree[i] * s;
        }
    }

    pub fn dense(&self) -> Mat<f64> {
        let n = self.len();
        let mut m = Mat::zeros(n, n);
        for (i, list) in self.neighbours.iter().enumerate() {
            if list.is_empty() {
                continue;
            }
            m[(i, i)] = 1.0;
            for &j in list {
                m[(i, j)] = -self.inv_sqrt_degree[i] * self.inv_sqrt_degree[j];
            }
        }
        m
    }

    pub fn residual(&self, value: f64, vector: &[f64]) -> f64 {
        let mut lx = vec![0.0; vector.len()];
        self.apply(vector, &mut lx);
        lx.iter().zip(vector).map(|(a, b)| (a - value * b).powi(2)).sum::<f64>().sqrt()
    }

    /// Orthonormal basis of the nullspace, derived from component structure.
    fn nullspace(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut component = vec![usize::MAX; n];
        let mut basis = Vec::new();
        for start in 0..n {
            if component[start] != usize::MAX {
                continue;
            }
            let id = basis.len();
            let mut v = vec![0.0; n];
            let mut stack = vec![start];
            component[start] = id;
            while let Some(i) = stack.pop() {
                // D^{1/2} 1_C, or e_i for an isolated node.
                let degree = self.neighbours[i].len();
                v[i] = if degree == 0 { 1.0 } else { (degree as f64).sqrt() };
                for &j in &self.neighbours[i] {
                    if component[j] == usize::MAX {
                        component[j] = id;
                        stack.push(j);
                    }
                }
            }
            normalize(&mut v);
            basis.push(v);
        }
        basis
    }
}

/// Eigenpairs with eigenvalue above [`NULL_TOL`], ascending.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

/// The `k` smallest non-null eigenpairs, using a dense solver up to
/// `dense_limit` nodes and Lanczos above.
pub fn smallest_nontrivial(lap: &NormalizedLaplacian, k: usize, dense_limit: usize, seed: u64) -> Result<Spectrum> {
    let spectrum = if lap.len() <= dense_limit {
        dense_smallest(lap, k)?
    } else {
        lanczos_smallest(lap, k, seed)?
    };
    for (value, vector) in spectrum.values.iter().zip(&spectrum.vectors) {
        let r = lap.residual(*value, vector);
        if !(r <= RESIDUAL_TOL) {
            return Err(Error::Numerical(format!("eigenpair residual {r:e} for eigenvalue {value}")));
        }
    }
    Ok(spectrum)
}

fn dense_smallest(lap: &NormalizedLaplacian, k: usize) -> Result<Spectrum> {
    if lap.is_empty() {
        return Ok(Spectrum { values: vec![], vectors: vec![] });
    }
    let (values, vectors) = symmetric_eigen(&lap.dense())?;
    let mut order: Vec<usize> = (0..lap.len()).filter(|&i| values[i] >= NULL_TOL).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    order.truncate(k);
    Ok(Spectrum {
        values: order.iter().map(|&i| values[i]).collect(),
        vectors: order
            .iter()
            .map(|&i| {
                let mut v = vectors[i].clone();
                normalize(&mut v);
                v
            })
            .collect(),
    })
}

fn lanczos_smallest(lap: &NormalizedLaplacian, k: usize, seed: u64) -> Result<Spectrum> {
    let n = lap.len();
    let null = lap.nullspace();
    let available = n - null.len();
    let want = k.min(available);
    if want == 0 {
        return Ok(Spectrum { values: vec![], vectors: vec![] });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = (4 * want + 40).min(available);
    loop {
        let result = lanczos_run(lap, &null, steps, want, &mut rng)?;
        let converged = result
            .values
            .iter()
            .zip(&result.vectors)
            .all(|(&v, x)| lap.residual(v, x) <= 1e-9);
        if converged || steps == available {
            return Ok(result);
        }
        steps = (steps * 2).min(available);
    }
}

/// One Lanczos pass of `steps` iterations on `2I - L` in the complement of
/// `null`. The Ritz problem is formed from explicit products rather than the
/// three-term coefficients, which keeps it exact after restarts.
fn lanczos_run(lap: &NormalizedLaplacian, null: &[Vec<f64>], steps: usize, want: usize, rng: &mut ChaCha8Rng) -> Result<Spectrum> {
    let n = lap.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut images: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut q = random_unit(n, null, &basis, rng);
    while basis.len() < steps {
        let mut w = vec![0.0; n];
        lap.apply(&q, &mut w);
        for (wi, qi) in w.iter_mut().zip(&q) {
            *wi = 2.0 * qi - *wi;
        }
        basis.push(q);
        images.push(w.clone());
        if basis.len() == steps {
            break;
        }
        let scale = dot(&w, &w).sqrt();
        for _ in 0..2 {
            project_out(&mut w, null);
            project_out(&mut w, &basis);
        }
        let b = dot(&w, &w).sqrt();
        q = if b < 1e-8 * scale.max(1.0) {
            // Invariant subspace: continue from a fresh orthogonal direction.
            random_unit(n, null, &basis, rng)
        } else {
            w.iter().map(|x| x / b).collect()
        };
    }
    let m = basis.len();
    let mut t = Mat::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = 0.5 * (dot(&basis[i], &images[j]) + dot(&basis[j], &images[i]));
            t[(i, j)] = v;
            t[(j, i)] = v;
        }
    }
    let (ritz_values, ritz_vectors) = symmetric_eigen(&t)?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| ritz_values[b].total_cmp(&ritz_values[a]));
    let mut values = Vec::new();
    let mut vectors = Vec::new();
    for &i in &order {
        let y = &ritz_vectors[i];
        let mut x = vec![0.0; n];
        for (j, qj) in basis.iter().enumerate() {
            let c = y[j];
            for (xi, qi) in x.iter_mut().zip(qj) {
                *xi += c * qi;
            }
        }
        normalize(&mut x);
        let mut lx = vec![0.0; n];
        lap.apply(&x, &mut lx);
        let value = dot(&lx, &x);
        if value < NULL_TOL {
            continue;
        }
        values.push(value);
        vectors.push(x);
        if values.len() == want {
            break;
        }
    }
    Ok(Spectrum { values, vectors })
}

/// Eigenvalues and eigenvectors (as columns) of a symmetric matrix.
fn symmetric_eigen(m: &Mat<f64>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let eig = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let values = eig.S().column_vector().iter().copied().collect();
    let u = eig.U();
    let vectors = (0..u.ncols()).map(|j| u.col(j).iter().copied().collect()).collect();
    Ok((values, vectors))
}

fn random_unit(n: usize, null: &[Vec<f64>], basis: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scale = dot(&v, &v).sqrt();
        for _ in 0..2 {
            project_out(&mut v, null);
            project_out(&mut v, basis);
        }
        if dot(&v, &v).sqrt() > 1e-6 * scale {
            normalize(&mut v);
            return v;
        }
    }
}

fn project_out(v: &mut [f64], against: &[Vec<f64>]) {
    for b in against {
        let c = dot(v, b);
        for (x, y) in v.iter_mut().zip(b) {
            *x -= c * y;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> NormalizedLaplacian {
        NormalizedLaplacian::from_edges(n, (0..n - 1).map(|i| (i, i + 1)))
    }

    #[test]
    fn k2_has_single_eigenvalue_two() {
        let lap = NormalizedLaplacian::from_edges(2, [(0, 1), (1, 0)]);
        let s = smallest_nontrivial(&lap, 20, 100, 0).unwrap();
        assert_eq!(s.values.len(), 1);
        assert!((s.values[0] - 2.0).abs() < 1e-12);
        let v = &s.vectors[0];
        assert!((v[0].abs() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((v[0] + v[1]).abs() < 1e-12);
    }

    #[test]
    fn edgeless_graph_is_all_null() {
        let lap = NormalizedLaplacian::from_edges(5, []);
        assert!(smallest_nontrivial(&lap, 20, 100, 0).unwrap().values.is_empty());
        assert!(smallest_nontrivial(&lap, 20, 0, 0).unwrap().values.is_empty());
    }

    #[test]
    fn path_spectrum_matches_closed_form() {
        // Normalized Laplacian of P_n: 1 - cos(pi k / (n - 1)), k = 0..n-1.
        let n = 30;
        let s = smallest_nontrivial(&path(n), 5, 100, 0).unwrap();
        for (k, v) in s.values.iter().enumerate() {
            let expected = 1.0 - (std::f64::consts::PI * (k + 1) as f64 / (n - 1) as f64).cos();
            assert!((v - expected).abs() < 1e-10, "{k}: {v} vs {expected}");
        }
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        // Two components plus isolated nodes, to exercise deflation.
        let mut edges: Vec<(usize, usize)> = (0..59).map(|i| (i, i + 1)).collect();
        edges.extend((0..40).map(|i| (i, (i * 7 + 3) % 60)));
        edges.extend((60..99).map(|i| (i, i + 1)));
        let lap = NormalizedLaplacian::from_edges(104, edges);
        let dense = smallest_nontrivial(&lap, 8, 1000, 0).unwrap();
        let sparse = smallest_nontrivial(&lap, 8, 0, 11).unwrap();
        assert_eq!(dense.values.len(), 8);
        for (a, b) in dense.values.iter().zip(&sparse.values) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        for v in &sparse.vectors {
            for w in &sparse.vectors {
                let d = dot(v, w);
                assert!(d.abs() < 1e-6 || (d - 1.0).abs() < 1e-6);
            }
        }
    }
}
