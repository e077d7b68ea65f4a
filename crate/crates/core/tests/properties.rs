use std::collections::{HashMap, HashSet};

use proptest::prelude::*;
use voicelink::assignment::{apply_mask_and_threshold, extract_voices, linear_assignment, resolve_greedy};
use voicelink::features::{duration_feature, intrinsic_features, DURATION_COL};
use voicelink::graph::{GraphOptions, RelationType, ScoreGraph};
use voicelink::model::{threshold_links, LinkScores};
use voicelink::score::{derive_ground_truth_links, parse_score, preprocess_monophonic, Measure, Note, PreprocessOptions, Score};
use voicelink::spectral::{smallest_nontrivial, NormalizedLaplacian};

const MEASURE: u64 = 16;

fn build(raw: &[(u64, u64, u8, u32)], scale: u64) -> Score {
    let end = raw.iter().map(|n| n.0 + n.1).max().unwrap_or(0);
    let measures = (0..end.div_ceil(MEASURE).max(1))
        .map(|i| Measure {
            index: i as i64,
            onset: i * MEASURE * scale,
            duration: MEASURE * scale,
        })
        .collect();
    let notes = raw
        .iter()
        .enumerate()
        .map(|(i, &(onset, duration, pitch, voice))| Note {
            id: format!("n{i}"),
            onset: onset * scale,
            duration: duration * scale,
            pitch,
            voice: Some(voice),
        })
        .collect();
    Score::new(4, measures, notes).unwrap()
}

fn raw_notes(max: usize) -> impl Strategy<Value = Vec<(u64, u64, u8, u32)>> {
    prop::collection::vec((0u64..64, 1u64..12, 40u8..80, 0u32..3), 1..max)
}

fn score() -> impl Strategy<Value = Score> {
    raw_notes(30).prop_map(|r| build(&r, 1))
}

fn unlabelled() -> impl Strategy<Value = Score> {
    score().prop_map(|s| {
        let notes = s.notes.iter().map(|n| Note { voice: None, ..n.clone() }).collect();
        Score::new(s.divisions, s.measures.clone(), notes).unwrap()
    })
}

fn monophonic() -> impl Strategy<Value = Score> {
    score().prop_map(|s| preprocess_monophonic(&s, PreprocessOptions::default()).unwrap().0)
}

fn scores_for(candidates: &[(usize, usize)]) -> impl Strategy<Value = LinkScores> {
    let pairs = candidates.to_vec();
    prop::collection::vec(0.0f64..1.0, pairs.len()).prop_map(move |p| LinkScores::new(pairs.clone(), p))
}

fn degrees_ok(n: usize, links: &[(usize, usize)]) -> bool {
    let mut out = vec![0; n];
    let mut inc = vec![0; n];
    for &(u, v) in links {
        out[u] += 1;
        inc[v] += 1;
    }
    out.iter().chain(&inc).all(|&d| d <= 1)
}

proptest! {
    #[test]
    fn json_round_trip(s in score()) {
        let text = s.to_json();
        let back = parse_score(text.as_bytes()).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.to_json(), text);
    }

    #[test]
    fn monophonic_voices(s in score(), truncate in any::<bool>()) {
        let (m, _) = preprocess_monophonic(&s, PreprocessOptions { truncate_overlaps: truncate }).unwrap();
        let mut by_voice: HashMap<u32, Vec<&Note>> = HashMap::new();
        for n in &m.notes {
            by_voice.entry(n.voice.unwrap()).or_default().push(n);
        }
        for notes in by_voice.values_mut() {
            notes.sort_by_key(|n| n.onset);
            for w in notes.windows(2) {
                prop_assert!(w[0].onset < w[1].onset);
                if truncate {
                    prop_assert!(w[0].offset() <= w[1].onset);
                }
            }
        }
    }

    #[test]
    fn ground_truth_is_a_set_of_paths(s in monophonic()) {
        let links = derive_ground_truth_links(&s).unwrap().links;
        prop_assert!(degrees_ok(s.len(), &links));
        let voices: HashSet<_> = s.notes.iter().map(|n| n.voice).collect();
        prop_assert_eq!(links.len(), s.len() - voices.len());
    }

    #[test]
    fn relations_are_disjoint_and_oriented(s in unlabelled(), inclusive in any::<bool>()) {
        let options = GraphOptions { during_inclusive: inclusive, ..Default::default() };
        let g = ScoreGraph::build(&s, &options).unwrap();
        let mut kinds: HashMap<(usize, usize), Vec<RelationType>> = HashMap::new();
        for e in &g.edges {
            kinds.entry((e.src, e.dst)).or_default().push(e.relation);
            let (u, v) = (&s.notes[e.src], &s.notes[e.dst]);
            if e.relation != RelationType::Onset {
                if e.relation.is_reverse() {
                    prop_assert!(u.onset >= v.onset);
                } else {
                    prop_assert!(u.onset <= v.onset);
                }
            }
        }
        if !inclusive {
            for rels in kinds.values() {
                let base: Vec<_> = rels
                    .iter()
                    .filter(|r| matches!(r, RelationType::Onset | RelationType::During | RelationType::Follow))
                    .collect();
                prop_assert!(base.len() <= 1, "{:?}", rels);
            }
        }
        for rels in kinds.values() {
            if rels.contains(&RelationType::Silence) {
                prop_assert_eq!(rels.len(), 1);
            }
        }
    }

    #[test]
    fn graph_is_deterministic(s in unlabelled()) {
        let a = ScoreGraph::build(&s, &GraphOptions::default()).unwrap();
        let b = ScoreGraph::build(&s, &GraphOptions::default()).unwrap();
        prop_assert_eq!(a.edges, b.edges);
        prop_assert_eq!(a.candidates, b.candidates);
    }

    #[test]
    fn candidates_never_overlap_in_time(s in unlabelled()) {
        let g = ScoreGraph::build(&s, &GraphOptions::default()).unwrap();
        for &(u, v) in &g.candidates {
            prop_assert!(s.notes[u].offset() <= s.notes[v].onset);
        }
    }

    #[test]
    fn targets_are_covered_without_long_gaps(raw in raw_notes(30)) {
        // Rewrite each voice as a gapless sequence so no rest exceeds the window.
        let mut next = [0u64; 3];
        let packed: Vec<_> = raw
            .iter()
            .map(|&(_, d, p, v)| {
                let onset = next[v as usize];
                next[v as usize] += d;
                (onset, d, p, v)
            })
            .collect();
        let s = preprocess_monophonic(&build(&packed, 1), PreprocessOptions::default()).unwrap().0;
        let g = ScoreGraph::build(&s, &GraphOptions::default()).unwrap();
        prop_assert_eq!(g.coverage_report().unwrap().fraction, 1.0);
    }

    #[test]
    fn duration_feature_is_monotone_and_bounded((m, d) in (1u64..1000).prop_flat_map(|m| (Just(m), 0..10 * m))) {
        let a = duration_feature(d, m);
        prop_assert!(a > 0.0 && a <= 1.0);
        prop_assert!(duration_feature(d + 1, m) < a);
    }

    #[test]
    fn duration_column_ignores_time_scale(raw in raw_notes(20), k in 2u64..6) {
        let a = intrinsic_features(&build(&raw, 1));
        let b = intrinsic_features(&build(&raw, k));
        for r in 0..a.rows() {
            prop_assert!((a.get(r, DURATION_COL) - b.get(r, DURATION_COL)).abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_spectrum_in_zero_two(s in unlabelled()) {
        let g = ScoreGraph::build(&s, &GraphOptions::default()).unwrap();
        let lap = NormalizedLaplacian::from_edges(g.num_nodes(), g.edges.iter().map(|e| (e.src, e.dst)));
        let spectrum = smallest_nontrivial(&lap, g.num_nodes(), usize::MAX, 0).unwrap();
        for (&value, vector) in spectrum.values.iter().zip(&spectrum.vectors) {
            prop_assert!(value > 0.0 && value <= 2.0 + 1e-9);
            prop_assert!(lap.residual(value, vector) < 1e-6);
        }
    }

    #[test]
    fn postprocessing_respects_degrees(
        (s, scores) in monophonic().prop_flat_map(|s| {
            let g = ScoreGraph::build(&s, &GraphOptions::default()).unwrap();
            (Just(s), scores_for(&g.candidates))
        }),
        tau in 0.0f64..1.0,
    ) {
        let ids: Vec<String> = s.notes.iter().map(|n| n.id.clone()).collect();
        let la = apply_mask_and_threshold(&scores, &linear_assignment(&scores), tau);
        let greedy = resolve_greedy(&scores, &ids, tau);
        prop_assert!(degrees_ok(s.len(), &la));
        prop_assert!(degrees_ok(s.len(), &greedy));
        let above: HashSet<_> = threshold_links(&scores, tau).into_iter().collect();
        prop_assert!(la.iter().all(|l| above.contains(l)));
        let voices = extract_voices(&s, &la).unwrap();
        prop_assert_eq!(voices.voice_of.len(), s.len());
        let mut by_voice: HashMap<u32, Vec<&Note>> = HashMap::new();
        for (n, &v) in s.notes.iter().zip(&voices.voice_of) {
            by_voice.entry(v).or_default().push(n);
        }
        for notes in by_voice.values_mut() {
            notes.sort_by_key(|n| n.onset);
            for w in notes.windows(2) {
                prop_assert!(w[0].offset() <= w[1].onset);
            }
        }
    }
}
