//! Turning link probabilities into voices: maximum-weight partial matching,
//! greedy conflict resolution and path extraction.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::LinkScores;
use crate::score::Score;

/// Selection over the candidate pairs, aligned with [`LinkScores::pairs`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentMask {
    pub selected: Vec<bool>,
}

impl AssignmentMask {
    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }
}

/// Maximum-weight matching between link sources and destinations in which
/// every node may stay unmatched. Pairs with non-positive weight never add
/// weight and are left out.
pub fn linear_assignment(scores: &LinkScores) -> AssignmentMask {
    let mut selected = vec![false; scores.len()];
    let mut rows = BTreeMap::new();
    let mut cols = BTreeMap::new();
    for ((u, v), w) in scores.iter() {
        if w > 0.0 {
            let r = rows.len();
            rows.entry(u).or_insert(r);
            let c = cols.len();
            cols.entry(v).or_insert(c);
        }
    }
    let size = rows.len().max(cols.len());
    if size == 0 {
        return AssignmentMask { selected };
    }
    // Padding rows/columns and non-candidate cells cost 0, the same as
    // leaving a node unmatched.
    let mut cost = vec![0.0; size * size];
    let mut cell = vec![usize::MAX; size * size];
    for (k, ((u, v), w)) in scores.iter().enumerate() {
        if w > 0.0 {
            let at = rows[&u] * size + cols[&v];
            cost[at] = -w;
            cell[at] = k;
        }
    }
    for (r, c) in hungarian(&cost, size).into_iter().enumerate() {
        let k = cell[r * size + c];
        if k != usize::MAX {
            selected[k] = true;
        }
    }
    AssignmentMask { selected }
}

/// Minimum-cost perfect matching on a dense `n x n` matrix (potentials and
/// shortest augmenting paths, O(n^3)). Returns the column of every row.
fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based, column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut min_to = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        min_to.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = row[j - 1] - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0; n];
    for j in 1..=n {
        col_of[owner[j] - 1] = j - 1;
    }
    col_of
}

/// Selected pairs scoring at least `tau`.
pub fn apply_mask_and_threshold(scores: &LinkScores, mask: &AssignmentMask, tau: f64) -> Vec<(usize, usize)> {
    scores
        .iter()
        .zip(&mask.selected)
        .filter(|&((_, p), &keep)| keep && p >= tau)
        .map(|((pair, _), _)| pair)
        .collect()
}

/// Accepts pairs in descending score order while both endpoints have a free
/// slot. Equal scores are ordered by source id, then destination id.
pub fn resolve_greedy(scores: &LinkScores, node_ids: &[String], tau: f64) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).filter(|&k| scores.probs[k] >= tau).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (scores.probs[a], scores.probs[b]);
        let (ua, va) = scores.pairs[a];
        let (ub, vb) = scores.pairs[b];
        pb.partial_cmp(&pa)
            .unwrap_or(Ordering::Equal)
            .then_with(|| node_ids[ua].cmp(&node_ids[ub]))
            .then_with(|| node_ids[va].cmp(&node_ids[vb]))
    });
    let mut out_taken = HashSet::new();
    let mut in_taken = HashSet::new();
    let mut kept = Vec::new();
    for k in order {
        let (u, v) = scores.pairs[k];
        if !out_taken.contains(&u) && !in_taken.contains(&v) {
            out_taken.insert(u);
            in_taken.insert(v);
            kept.push((u, v));
        }
    }
    kept.sort_unstable();
    kept
}

/// Checks the at-most-one in/out link per node constraint.
pub fn check_degrees(score: &Score, links: &[(usize, usize)]) -> Result<()> {
    let n = score.len();
    let mut out_deg = vec![0usize; n];
    let mut in_deg = vec![0usize; n];
    for &(u, v) in links {
        if u >= n || v >= n {
            return Err(Error::Consistency(format!("link ({u}, {v}) references an unknown note")));
        }
        out_deg[u] += 1;
        in_deg[v] += 1;
    }
    for i in 0..n {
        for (direction, count) in [("outgoing", out_deg[i]), ("incoming", in_deg[i])] {
            if count > 1 {
                return Err(Error::Degree {
                    node: score.notes[i].id.clone(),
                    direction,
                    count,
                });
            }
        }
    }
    Ok(())
}

/// Notes grouped into voices; voice ids follow the first onset of each voice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VoiceAssignment {
    pub voices: Vec<Vec<String>>,
    /// Voice id per note, in score order.
    pub voice_of: Vec<u32>,
}

impl VoiceAssignment {
    pub fn num_voices(&self) -> usize {
        self.voices.len()
    }
}

/// Follows links from every note without a predecessor. Links must go
/// forward in time without overlap and respect the degree constraints.
pub fn extract_voices(score: &Score, links: &[(usize, usize)]) -> Result<VoiceAssignment> {
    check_degrees(score, links)?;
    let n = score.len();
    let mut next = vec![None; n];
    let mut has_prev = vec![false; n];
    for &(u, v) in links {
        let (a, b) = (&score.notes[u], &score.notes[v]);
        if a.offset() > b.onset {
            return Err(Error::Consistency(format!("link {} -> {} overlaps in time", a.id, b.id)));
        }
        next[u] = Some(v);
        has_prev[v] = true;
    }
    let mut voice_of = vec![u32::MAX; n];
    let mut voices = Vec::new();
    // Score order is onset order, so voice ids follow first onsets.
    for start in (0..n).filter(|&i| !has_prev[i]) {
        let id = voices.len() as u32;
        let mut voice = Vec::new();
        let mut cur = Some(start);
        while let Some(i) = cur {
            voice_of[i] = id;
            voice.push(score.notes[i].id.clone());
            cur = next[i];
        }
        voices.push(voice);
    }
    if let Some(i) = voice_of.iter().position(|&v| v == u32::MAX) {
        return Err(Error::Consistency(format!("note {} lies on a cycle", score.notes[i].id)));
    }
    Ok(VoiceAssignment { voices, voice_of })
}
