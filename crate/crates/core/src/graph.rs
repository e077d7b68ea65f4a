//! Heterogeneous note graph: typed temporal relations between notes and the
//! candidate link set the predictor scores.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::score::{derive_ground_truth_links, GroundTruthLinks, Score};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationType {
    Onset,
    During,
    Follow,
    Silence,
    DuringRev,
    FollowRev,
    SilenceRev,
}

impl RelationType {
    pub const ALL: [RelationType; 7] = [
        RelationType::Onset,
        RelationType::During,
        RelationType::Follow,
        RelationType::Silence,
        RelationType::DuringRev,
        RelationType::FollowRev,
        RelationType::SilenceRev,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RelationType::Onset => "onset",
            RelationType::During => "during",
            RelationType::Follow => "follow",
            RelationType::Silence => "silence",
            RelationType::DuringRev => "during_rev",
            RelationType::FollowRev => "follow_rev",
            RelationType::SilenceRev => "silence_rev",
        }
    }

    /// Reverse type of a forward relation; `Onset` is its own inverse.
    pub fn inverse(self) -> RelationType {
        match self {
            RelationType::Onset => RelationType::Onset,
            RelationType::During => RelationType::DuringRev,
            RelationType::Follow => RelationType::FollowRev,
            RelationType::Silence => RelationType::SilenceRev,
            RelationType::DuringRev => RelationType::During,
            RelationType::FollowRev => RelationType::Follow,
            RelationType::SilenceRev => RelationType::Silence,
        }
    }

    pub fn is_reverse(self) -> bool {
        matches!(self, RelationType::DuringRev | RelationType::FollowRev | RelationType::SilenceRev)
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TypedEdge {
    pub src: usize,
    pub relation: RelationType,
    pub dst: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphOptions {
    /// `during` also holds when the later note starts exactly at the earlier
    /// note's offset (then it co-occurs with `follow`).
    pub during_inclusive: bool,
    /// Only notes ending at the latest offset before a gap emit `silence`.
    pub silence_last_offset: bool,
    /// Candidate links may reach at most this many measures ahead.
    pub window_measures: i64,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            during_inclusive: false,
            silence_last_offset: false,
            window_measures: 2,
        }
    }
}

/// Builds every typed edge, sorted by `(relation, src, dst)`.
pub fn build_typed_edges(score: &Score, options: &GraphOptions) -> Vec<TypedEdge> {
    let notes = &score.notes;
    // Notes are onset-sorted, so onset ranges are contiguous index ranges.
    let first_at_or_after = |t: u64| notes.partition_point(|n| n.onset < t);
    let first_after = |t: u64| notes.partition_point(|n| n.onset <= t);

    let mut edges = Vec::new();
    let mut base = |src: usize, relation: RelationType, dst: usize| {
        edges.push(TypedEdge { src, relation, dst });
        edges.push(TypedEdge {
            src: dst,
            relation: relation.inverse(),
            dst: src,
        });
    };

    for (u, nu) in notes.iter().enumerate() {
        let off = nu.offset();
        // Each unordered onset pair is visited once here; `base` adds both directions.
        for v in (u + 1)..first_after(nu.onset) {
            base(u, RelationType::Onset, v);
        }
        let during_end = if options.during_inclusive {
            first_after(off)
        } else {
            first_at_or_after(off)
        };
        for v in first_after(nu.onset)..during_end {
            base(u, RelationType::During, v);
        }
        for v in first_at_or_after(off)..first_after(off) {
            base(u, RelationType::Follow, v);
        }
        let next = first_after(off);
        if next < notes.len() {
            let target_onset = notes[next].onset;
            let qualifies = !options.silence_last_offset || {
                let latest = notes
                    .iter()
                    .map(|n| n.offset())
                    .filter(|&o| o < target_onset)
                    .max()
                    .expect("u itself ends before the target");
                latest == off
            };
            if qualifies {
                for v in next..first_after(target_onset) {
                    base(u, RelationType::Silence, v);
                }
            }
        }
    }
    edges.sort_unstable_by_key(|e| (e.relation, e.src, e.dst));
    edges
}

/// Ordered pairs `(u, v)` with `offset(u) <= onset(v)` and `v` at most
/// `window_measures` measures after `u`, sorted by
/// `(src onset, src id, dst onset, dst id)`.
pub fn build_candidate_links(score: &Score, window_measures: i64) -> Result<Vec<(usize, usize)>> {
    if window_measures < 0 {
        return Err(Error::Config(format!("window_measures must be >= 0, got {window_measures}")));
    }
    let window = window_measures as usize;
    let notes = &score.notes;
    let measure = score.note_measures();
    let mut out = Vec::new();
    for (u, nu) in notes.iter().enumerate() {
        let start = notes.partition_point(|n| n.onset < nu.offset());
        for v in start..notes.len() {
            if measure[v] > measure[u] + window {
                break;
            }
            out.push((u, v));
        }
    }
    out.sort_by(|&(a, b), &(c, d)| {
        let key = |u: usize, v: usize| (notes[u].onset, &notes[u].id, notes[v].onset, &notes[v].id);
        key(a, b).cmp(&key(c, d))
    });
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ScoreGraph {
    pub node_ids: Vec<String>,
    pub edges: Vec<TypedEdge>,
    pub candidates: Vec<(usize, usize)>,
    pub targets: Option<GroundTruthLinks>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coverage {
    pub n_targets: usize,
    pub n_covered: usize,
    pub fraction: f64,
}

impl ScoreGraph {
    /// Builds edges and candidates; ground-truth targets are attached when
    /// every note carries a voice label.
    pub fn build(score: &Score, options: &GraphOptions) -> Result<Self> {
        let targets = if score.has_voices() && !score.is_empty() {
            Some(derive_ground_truth_links(score)?)
        } else {
            None
        };
        Ok(Self {
            node_ids: score.notes.iter().map(|n| n.id.clone()).collect(),
            edges: build_typed_edges(score, options),
            candidates: build_candidate_links(score, options.window_measures)?,
            targets,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    /// `(sources, destinations)` of each relation, in [`RelationType::ALL`] order.
    pub fn relation_edges(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let mut out = vec![(Vec::new(), Vec::new()); RelationType::ALL.len()];
        for e in &self.edges {
            let slot = &mut out[e.relation.index()];
            slot.0.push(e.src);
            slot.1.push(e.dst);
        }
        out
    }

    pub fn relation_counts(&self) -> BTreeMap<RelationType, usize> {
        let mut counts: BTreeMap<_, _> = RelationType::ALL.iter().map(|&r| (r, 0)).collect();
        for e in &self.edges {
            *counts.get_mut(&e.relation).expect("all relations present") += 1;
        }
        counts
    }

    /// Position of every candidate pair, for O(1) lookups.
    pub fn candidate_positions(&self) -> std::collections::HashMap<(usize, usize), usize> {
        self.candidates.iter().enumerate().map(|(i, &p)| (p, i)).collect()
    }

    /// Share of ground-truth links that fall inside the candidate set.
    pub fn coverage_report(&self) -> Result<Coverage> {
        let targets = self
            .targets
            .as_ref()
            .ok_or_else(|| Error::State("coverage needs ground-truth targets".into()))?;
        let positions = self.candidate_positions();
        let n_covered = targets.links.iter().filter(|l| positions.contains_key(l)).count();
        let n_targets = targets.len();
        Ok(Coverage {
            n_targets,
            n_covered,
            fraction: if n_targets == 0 {
                1.0
            } else {
                n_covered as f64 / n_targets as f64
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::fixtures::{four_notes, measures, note};
    use crate::score::Score;
    use std::collections::BTreeSet;

    fn ids_of(score: &Score, edges: &[TypedEdge], rel: RelationType) -> BTreeSet<(String, String)> {
        edges
            .iter()
            .filter(|e| e.relation == rel)
            .map(|e| (score.notes[e.src].id.clone(), score.notes[e.dst].id.clone()))
            .collect()
    }

    fn set(pairs: &[(&str, &str)]) -> BTreeSet<(String, String)> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn four_note_typed_edges() {
        let s = four_notes();
        let e = build_typed_edges(&s, &GraphOptions::default());
        use RelationType::*;
        assert_eq!(ids_of(&s, &e, Onset), set(&[("u", "v"), ("v", "u")]));
        assert_eq!(ids_of(&s, &e, During), set(&[("u", "w")]));
        assert_eq!(ids_of(&s, &e, DuringRev), set(&[("w", "u")]));
        assert_eq!(ids_of(&s, &e, Follow), set(&[("v", "w")]));
        assert_eq!(ids_of(&s, &e, FollowRev), set(&[("w", "v")]));
        assert_eq!(ids_of(&s, &e, Silence), set(&[("u", "x"), ("v", "x"), ("w", "x")]));
        assert_eq!(ids_of(&s, &e, SilenceRev), set(&[("x", "u"), ("x", "v"), ("x", "w")]));
        assert_eq!(e.len(), 12);
    }

    #[test]
    fn single_note_has_no_edges() {
        let s = Score::new(4, measures(1, 16), vec![note("a", 0, 4, 60, None)]).unwrap();
        assert!(build_typed_edges(&s, &GraphOptions::default()).is_empty());
    }

    #[test]
    fn follow_boundary_excludes_during() {
        let s = Score::new(4, measures(1, 16), vec![note("a", 0, 4, 60, None), note("b", 4, 4, 62, None)]).unwrap();
        let e = build_typed_edges(&s, &GraphOptions::default());
        assert_eq!(
            e,
            vec![
                TypedEdge { src: 0, relation: RelationType::Follow, dst: 1 },
                TypedEdge { src: 1, relation: RelationType::FollowRev, dst: 0 },
            ]
        );
        let inclusive = build_typed_edges(&s, &GraphOptions { during_inclusive: true, ..Default::default() });
        assert_eq!(inclusive.len(), 4);
        assert!(inclusive.iter().any(|e| e.relation == RelationType::During));
    }

    #[test]
    fn silence_last_offset_variant() {
        let s = four_notes();
        let e = build_typed_edges(&s, &GraphOptions { silence_last_offset: true, ..Default::default() });
        assert_eq!(ids_of(&s, &e, RelationType::Silence), set(&[("u", "x"), ("w", "x")]));
    }

    #[test]
    fn four_note_candidates_in_order() {
        let s = four_notes();
        let c = build_candidate_links(&s, 2).unwrap();
        let named: Vec<_> = c.iter().map(|&(u, v)| (s.notes[u].id.as_str(), s.notes[v].id.as_str())).collect();
        assert_eq!(named, [("u", "x"), ("v", "w"), ("v", "x"), ("w", "x")]);
        assert_eq!(build_candidate_links(&s, 0).unwrap(), c);
        assert!(matches!(build_candidate_links(&s, -1), Err(Error::Config(_))));
    }

    #[test]
    fn window_limits_reach() {
        let s = Score::new(
            4,
            measures(5, 16),
            vec![note("a", 0, 4, 60, None), note("b", 32, 4, 60, None), note("c", 48, 4, 60, None)],
        )
        .unwrap();
        assert_eq!(build_candidate_links(&s, 2).unwrap(), vec![(0, 1), (1, 2)]);
        assert_eq!(build_candidate_links(&s, 3).unwrap(), vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(build_candidate_links(&s, 0).unwrap(), vec![]);
    }

    #[test]
    fn coverage_cases() {
        let g = ScoreGraph::build(&four_notes(), &GraphOptions::default()).unwrap();
        let c = g.coverage_report().unwrap();
        assert_eq!((c.n_targets, c.n_covered, c.fraction), (2, 2, 1.0));

        // A three-measure rest inside voice 0 breaks one link.
        let s = Score::new(
            4,
            measures(6, 16),
            vec![
                note("a", 0, 4, 60, Some(0)),
                note("b", 4, 4, 62, Some(0)),
                note("c", 64, 4, 64, Some(0)),
                note("d", 68, 4, 65, Some(0)),
            ],
        )
        .unwrap();
        let c = ScoreGraph::build(&s, &GraphOptions::default()).unwrap().coverage_report().unwrap();
        assert_eq!((c.n_targets, c.n_covered), (3, 2));
        assert!(c.fraction < 1.0);

        let solo = Score::new(4, measures(1, 16), vec![note("a", 0, 4, 60, Some(0))]).unwrap();
        let c = ScoreGraph::build(&solo, &GraphOptions::default()).unwrap().coverage_report().unwrap();
        assert_eq!(c.fraction, 1.0);

        let unlabeled = Score::new(4, measures(1, 16), vec![note("a", 0, 4, 60, None)]).unwrap();
        let g = ScoreGraph::build(&unlabeled, &GraphOptions::default()).unwrap();
        assert!(matches!(g.coverage_report(), Err(Error::State(_))));
    }
}
