//! Binary link precision, recall and F1.

use std::collections::HashSet;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_pred: usize,
    pub n_target: usize,
    pub n_correct: usize,
}

impl LinkMetrics {
    /// Degenerate cases: an empty prediction has precision 0 unless the
    /// target is empty too (then everything is 1); an empty target gives
    /// recall 1.
    pub fn from_counts(n_pred: usize, n_target: usize, n_correct: usize) -> Self {
        let (precision, recall) = match (n_pred, n_target) {
            (0, 0) => (1.0, 1.0),
            (0, _) => (0.0, 0.0),
            (_, 0) => (0.0, 1.0),
            (p, t) => (n_correct as f64 / p as f64, n_correct as f64 / t as f64),
        };
        Self {
            precision,
            recall,
            f1: f1(precision, recall),
            n_pred,
            n_target,
            n_correct,
        }
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn link_metrics(pred: &[(usize, usize)], target: &[(usize, usize)]) -> LinkMetrics {
    let pred: HashSet<_> = pred.iter().copied().collect();
    let target: HashSet<_> = target.iter().copied().collect();
    LinkMetrics::from_counts(pred.len(), target.len(), pred.intersection(&target).count())
}

/// Unweighted means of per-piece values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PieceMetrics {
    pub piece: String,
    #[serde(flatten)]
    pub metrics: LinkMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub pieces: Vec<PieceMetrics>,
    /// Pooled over all links of all pieces.
    pub micro: LinkMetrics,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
}

impl MetricsReport {
    pub fn new(pieces: Vec<PieceMetrics>) -> Self {
        let sum = |f: fn(&LinkMetrics) -> usize| pieces.iter().map(|p| f(&p.metrics)).sum::<usize>();
        let micro = LinkMetrics::from_counts(sum(|m| m.n_pred), sum(|m| m.n_target), sum(|m| m.n_correct));
        let n = pieces.len().max(1) as f64;
        let mean = |f: fn(&LinkMetrics) -> f64| pieces.iter().map(|p| f(&p.metrics)).sum::<f64>() / n;
        let macro_avg = MacroMetrics {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
        };
        Self { pieces, micro, macro_avg }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect() {
        let l = [(0, 1), (1, 2)];
        let m = link_metrics(&l, &l);
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn four_of_five() {
        let target = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)];
        let m = link_metrics(&target[..4], &target);
        assert_eq!(m.precision, 1.0);
        assert!((m.recall - 0.8).abs() < 1e-12);
        assert!((m.f1 - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate() {
        let m = link_metrics(&[], &[(0, 1)]);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let m = link_metrics(&[], &[]);
        assert_eq!(m.f1, 1.0);
        let m = link_metrics(&[(0, 1)], &[]);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 1.0, 0.0));
    }

    fn pairs() -> impl Strategy<Value = Vec<(usize, usize)>> {
        prop::collection::vec((0usize..6, 0usize..6), 0..12)
    }

    proptest! {
        #[test]
        fn bounded_and_symmetric(pred in pairs(), target in pairs()) {
            let m = link_metrics(&pred, &target);
            for v in [m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(f1(m.precision, m.recall), f1(m.recall, m.precision));
        }

        #[test]
        fn adding_a_correct_link_never_hurts(pred in pairs(), target in pairs()) {
            let before = link_metrics(&pred, &target);
            let missing: Vec<_> = target.iter().filter(|t| !pred.contains(t)).copied().collect();
            if let Some(&extra) = missing.first() {
                let mut more = pred.clone();
                more.push(extra);
                let after = link_metrics(&more, &target);
                prop_assert!(after.precision >= before.precision);
                prop_assert!(after.recall >= before.recall);
                prop_assert!(after.f1 >= before.f1);
            }
        }

        #[test]
        fn macro_f1_within_piece_range(sets in prop::collection::vec((pairs(), pairs()), 1..5)) {
            let pieces: Vec<_> = sets.iter().enumerate().map(|(i, (p, t))| PieceMetrics {
                piece: i.to_string(),
                metrics: link_metrics(p, t),
            }).collect();
            let lo = pieces.iter().map(|p| p.metrics.f1).fold(f64::INFINITY, f64::min);
            let hi = pieces.iter().map(|p| p.metrics.f1).fold(f64::NEG_INFINITY, f64::max);
            let r = MetricsReport::new(pieces);
            prop_assert!(r.macro_avg.f1 >= lo - 1e-12 && r.macro_avg.f1 <= hi + 1e-12);
        }
    }
}
