//! Training objectives: subsampled binary cross-entropy over candidate links
//! and a degree regularizer that pulls the predicted adjacency towards a
//! partial permutation matrix.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use voicelink_autodiff::{Index, Tape, Tensor, Var};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// Candidate positions used for the classification loss in one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingBatch {
    /// Candidate indices of target links.
    pub positives: Vec<usize>,
    /// Candidate indices of sampled non-links.
    pub negatives: Vec<usize>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Positives first, then negatives.
    pub fn indices(&self) -> Index {
        self.positives.iter().chain(&self.negatives).copied().collect()
    }

    pub fn labels(&self) -> Tensor {
        let mut y = vec![1.0; self.positives.len()];
        y.resize(self.len(), 0.0);
        Tensor::column(y)
    }
}

/// Every candidate that is a target link, plus an equally sized uniform
/// sample (without replacement) of the remaining candidates. The sample is
/// a pure function of `(seed, epoch)`.
pub fn subsample_negatives(candidates: &[(usize, usize)], targets: &[(usize, usize)], seed: u64, epoch: u64) -> TrainingBatch {
    let target_set: HashSet<_> = targets.iter().copied().collect();
    let (positives, pool): (Vec<usize>, Vec<usize>) = (0..candidates.len()).partition(|&i| target_set.contains(&candidates[i]));
    let k = positives.len().min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut negatives: Vec<usize> = sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
    negatives.sort_unstable();
    TrainingBatch { positives, negatives }
}

/// Summed binary cross-entropy of `probs` (`|Lambda| x 1`) over the batch.
pub fn bce_loss(tape: &mut Tape, probs: Var, batch: &TrainingBatch) -> Result<Var> {
    let picked = tape.gather_rows(probs, &batch.indices())?;
    let p = tape.clamp(picked, PROB_EPS, 1.0 - PROB_EPS)?;
    let y = batch.labels();
    let not_y = y.map(|v| 1.0 - v);
    let log_p = tape.ln(p)?;
    let q = tape.scale(p, -1.0)?;
    let q = tape.add_scalar(q, 1.0)?;
    let log_q = tape.ln(q)?;
    let y = tape.constant(y);
    let not_y = tape.constant(not_y);
    let pos = tape.mul(y, log_p)?;
    let neg = tape.mul(not_y, log_q)?;
    let both = tape.add(pos, neg)?;
    let total = tape.sum(both)?;
    Ok(tape.scale(total, -1.0)?)
}

/// Source (`zeta`) and destination (`xi`) indicators of the target links,
/// as `N x 1` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorVectors {
    pub zeta: Tensor,
    pub xi: Tensor,
}

impl IndicatorVectors {
    pub fn from_links(num_nodes: usize, links: &[(usize, usize)]) -> Result<Self> {
        let mut zeta = Tensor::zeros(num_nodes, 1);
        let mut xi = Tensor::zeros(num_nodes, 1);
        for &(u, v) in links {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Consistency(format!("link ({u}, {v}) outside a {num_nodes}-node graph")));
            }
            zeta.set(u, 0, 1.0);
            xi.set(v, 0, 1.0);
        }
        Ok(Self { zeta, xi })
    }

    pub fn num_nodes(&self) -> usize {
        self.zeta.rows()
    }
}

/// Degree regularizer over the sparse adjacency given by `probs` at
/// `(src[i], dst[i])`:
///
/// ```text
/// L1 = |zeta - rowsum(A)| + |xi - colsum(A)|
/// L2 = |zeta - sqrt(rowsum(A^2))| + |xi - sqrt(colsum(A^2))|
/// L  = (L1 + L2) / N
/// ```
///
/// Square roots and norms use the zero subgradient at the origin, so the
/// loss is exactly zero on a matching configuration.
pub fn reg_loss(tape: &mut Tape, probs: Var, src: &Index, dst: &Index, indicators: &IndicatorVectors) -> Result<Var> {
    let n = indicators.num_nodes();
    if n == 0 {
        return Err(Error::Contract("regularization needs at least one node".into()));
    }
    let zeta = tape.constant(indicators.zeta.clone());
    let xi = tape.constant(indicators.xi.clone());
    let rows = tape.scatter_add_rows(probs, src, n)?;
    let cols = tape.scatter_add_rows(probs, dst, n)?;
    let sq = tape.square(probs)?;
    let rows_sq = tape.scatter_add_rows(sq, src, n)?;
    let rows_sq = tape.sqrt(rows_sq)?;
    let cols_sq = tape.scatter_add_rows(sq, dst, n)?;
    let cols_sq = tape.sqrt(cols_sq)?;
    let mut total: Option<Var> = None;
    for (target, sums) in [(zeta, rows), (xi, cols), (zeta, rows_sq), (xi, cols_sq)] {
        let diff = tape.sub(target, sums)?;
        let norm = tape.l2_norm(diff)?;
        total = Some(match total {
            None => norm,
            Some(t) => tape.add(t, norm)?,
        });
    }
    Ok(tape.scale(total.expect("four terms"), 1.0 / n as f64)?)
}

/// Regularization weight per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegSchedule {
    /// `min(max, epoch * rate)`.
    Ramp { rate: f64, max: f64 },
    Fixed { alpha: f64 },
    Off,
}

impl Default for RegSchedule {
    fn default() -> Self {
        RegSchedule::Ramp { rate: 0.02, max: 1.0 }
    }
}

impl RegSchedule {
    pub fn alpha(&self, epoch: usize) -> Result<f64> {
        match *self {
            RegSchedule::Ramp { rate, max } => alpha_schedule(epoch, rate, max),
            RegSchedule::Fixed { alpha } if alpha >= 0.0 => Ok(alpha),
            RegSchedule::Fixed { alpha } => Err(Error::Config(format!("negative regularization weight {alpha}"))),
            RegSchedule::Off => Ok(0.0),
        }
    }
}

pub fn alpha_schedule(epoch: usize, ramp_per_epoch: f64, alpha_max: f64) -> Result<f64> {
    if !(ramp_per_epoch >= 0.0) {
        return Err(Error::Config(format!("ramp must be non-negative, got {ramp_per_epoch}")));
    }
    Ok((epoch as f64 * ramp_per_epoch).min(alpha_max))
}

pub fn total_loss(tape: &mut Tape, clf: Var, reg: Var, alpha: f64) -> Result<Var> {
    let weighted = tape.scale(reg, alpha)?;
    Ok(tape.add(clf, weighted)?)
}
