//! Canonical score files: quantized notes on an integer tick grid plus a
//! measure map.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Measure {
    pub index: i64,
    pub onset: u64,
    pub duration: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub id: String,
    pub onset: u64,
    pub duration: u64,
    pub pitch: u8,
    pub voice: Option<u32>,
}

impl Note {
    pub fn offset(&self) -> u64 {
        self.onset + self.duration
    }
}

/// A validated piece. Notes are kept sorted by `(onset, pitch, id)` and that
/// order is the node order everywhere downstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Score {
    pub divisions: u32,
    pub measures: Vec<Measure>,
    pub notes: Vec<Note>,
}

#[derive(Deserialize)]
struct RawScore {
    divisions: i64,
    measures: Vec<RawMeasure>,
    notes: Vec<RawNote>,
}

#[derive(Deserialize)]
struct RawMeasure {
    index: i64,
    onset: i64,
    duration: i64,
}

#[derive(Deserialize)]
struct RawNote {
    id: String,
    onset: i64,
    duration: i64,
    pitch: i64,
    voice: Option<i64>,
}

#[derive(Deserialize)]
struct RawMeasureFile {
    divisions: i64,
    measures: Vec<RawMeasure>,
}

#[derive(Deserialize)]
struct CsvNote {
    id: String,
    onset: i64,
    duration: i64,
    pitch: i64,
    voice: Option<i64>,
}

fn non_negative(field: String, value: i64) -> Result<u64> {
    u64::try_from(value).map_err(|_| Error::validation(field, format!("must be nonnegative, got {value}")))
}

fn convert_measures(raw: Vec<RawMeasure>) -> Result<Vec<Measure>> {
    raw.into_iter()
        .enumerate()
        .map(|(i, m)| {
            Ok(Measure {
                index: m.index,
                onset: non_negative(format!("measures[{i}].onset"), m.onset)?,
                duration: non_negative(format!("measures[{i}].duration"), m.duration)?,
            })
        })
        .collect()
}

fn convert_note(i: usize, n: RawNote) -> Result<Note> {
    if !(0..=127).contains(&n.pitch) {
        return Err(Error::validation(format!("notes[{i}].pitch"), format!("{} outside 0..=127", n.pitch)));
    }
    let voice = match n.voice {
        None => None,
        Some(v) => Some(
            u32::try_from(v).map_err(|_| Error::validation(format!("notes[{i}].voice"), format!("invalid voice label {v}")))?,
        ),
    };
    Ok(Note {
        onset: non_negative(format!("notes[{i}].onset"), n.onset)?,
        duration: non_negative(format!("notes[{i}].duration"), n.duration)?,
        pitch: n.pitch as u8,
        voice,
        id: n.id,
    })
}

impl Score {
    /// Validates all invariants and sorts notes into canonical order.
    pub fn new(divisions: u32, measures: Vec<Measure>, mut notes: Vec<Note>) -> Result<Self> {
        if divisions == 0 {
            return Err(Error::validation("divisions", "must be positive"));
        }
        let mut expected = 0;
        for (i, m) in measures.iter().enumerate() {
            if m.duration == 0 {
                return Err(Error::validation(format!("measures[{i}].duration"), "must be positive"));
            }
            if m.onset != expected {
                return Err(Error::validation(
                    format!("measures[{i}].onset"),
                    format!("expected {expected} so measures tile the timeline, got {}", m.onset),
                ));
            }
            expected = m.onset + m.duration;
        }
        let mut ids = HashSet::new();
        for (i, n) in notes.iter().enumerate() {
            if n.duration == 0 {
                return Err(Error::validation(format!("notes[{i}].duration"), "must be at least one tick"));
            }
            if n.pitch > 127 {
                return Err(Error::validation(format!("notes[{i}].pitch"), format!("{} outside 0..=127", n.pitch)));
            }
            if n.onset >= expected {
                return Err(Error::validation(
                    format!("notes[{i}].onset"),
                    format!("{} lies outside the measure map ending at {expected}", n.onset),
                ));
            }
            if !ids.insert(n.id.as_str()) {
                return Err(Error::validation(format!("notes[{i}].id"), format!("duplicate id {}", n.id)));
            }
        }
        notes.sort_by(|a, b| (a.onset, a.pitch, &a.id).cmp(&(b.onset, b.pitch, &b.id)));
        Ok(Self {
            divisions,
            measures,
            notes,
        })
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    /// Ordinal position (not the `index` label) of the measure containing `tick`.
    pub fn measure_position(&self, tick: u64) -> Option<usize> {
        let pos = self.measures.partition_point(|m| m.onset <= tick);
        let m = self.measures.get(pos.checked_sub(1)?)?;
        (tick < m.onset + m.duration).then(|| pos - 1)
    }

    /// Measure position of every note, in note order.
    pub fn note_measures(&self) -> Vec<usize> {
        self.notes
            .iter()
            .map(|n| self.measure_position(n.onset).expect("validated: every note lies in a measure"))
            .collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.notes.iter().position(|n| n.id == id)
    }

    pub fn has_voices(&self) -> bool {
        self.notes.iter().all(|n| n.voice.is_some())
    }

    /// Normalized JSON: canonical note order, pretty-printed, trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("score serializes");
        s.push('\n');
        s
    }

    pub fn with_voices(&self, voices: &[u32]) -> Self {
        let mut out = self.clone();
        for (n, &v) in out.notes.iter_mut().zip(voices) {
            n.voice = Some(v);
        }
        out
    }
}

/// Parses a canonical JSON score.
pub fn parse_score(raw: &[u8]) -> Result<Score> {
    let raw: RawScore = serde_json::from_slice(raw).map_err(|e| Error::Parse(e.to_string()))?;
    let divisions = u32::try_from(raw.divisions)
        .map_err(|_| Error::validation("divisions", format!("invalid value {}", raw.divisions)))?;
    let measures = convert_measures(raw.measures)?;
    let notes = raw
        .notes
        .into_iter()
        .enumerate()
        .map(|(i, n)| convert_note(i, n))
        .collect::<Result<Vec<_>>>()?;
    Score::new(divisions, measures, notes)
}

/// Parses a CSV note list (`id,onset,duration,pitch,voice`, empty voice
/// allowed) with its JSON measure sidecar (`{"divisions", "measures"}`).
pub fn parse_score_csv(notes_csv: &[u8], measures_json: &[u8]) -> Result<Score> {
    let side: RawMeasureFile = serde_json::from_slice(measures_json).map_err(|e| Error::Parse(e.to_string()))?;
    let divisions = u32::try_from(side.divisions)
        .map_err(|_| Error::validation("divisions", format!("invalid value {}", side.divisions)))?;
    let measures = convert_measures(side.measures)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(notes_csv);
    let headers = reader.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    let expected = ["id", "onset", "duration", "pitch", "voice"];
    if headers.iter().ne(expected) {
        return Err(Error::Parse(format!("csv header must be {}", expected.join(","))));
    }
    let mut notes = Vec::new();
    for (i, row) in reader.deserialize::<CsvNote>().enumerate() {
        let row = row.map_err(|e| Error::Parse(e.to_string()))?;
        notes.push(convert_note(
            i,
            RawNote {
                id: row.id,
                onset: row.onset,
                duration: row.duration,
                pitch: row.pitch,
                voice: row.voice,
            },
        )?);
    }
    Score::new(divisions, measures, notes)
}

/// Options for [`preprocess_monophonic`].
#[derive(Debug, Clone, Copy)]
pub struct PreprocessOptions {
    pub truncate_overlaps: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            truncate_overlaps: true,
        }
    }
}

/// Keeps only the highest note among same-voice notes sharing an onset
/// (ties: longest, then smallest id) and optionally shortens notes that
/// overlap the next note of their voice. Returns the removed ids, sorted.
pub fn preprocess_monophonic(score: &Score, options: PreprocessOptions) -> Result<(Score, Vec<String>)> {
    let mut by_voice: BTreeMap<u32, Vec<&Note>> = BTreeMap::new();
    for n in &score.notes {
        let v = n.voice.ok_or_else(|| Error::MissingVoice(n.id.clone()))?;
        by_voice.entry(v).or_default().push(n);
    }
    let mut kept = Vec::with_capacity(score.notes.len());
    let mut removed = Vec::new();
    for notes in by_voice.values_mut() {
        // Winner of each onset group sorts first.
        notes.sort_by(|a, b| {
            a.onset
                .cmp(&b.onset)
                .then(b.pitch.cmp(&a.pitch))
                .then(b.duration.cmp(&a.duration))
                .then(a.id.cmp(&b.id))
        });
        let mut voice_notes: Vec<Note> = Vec::with_capacity(notes.len());
        for n in notes.iter() {
            match voice_notes.last() {
                Some(prev) if prev.onset == n.onset => removed.push(n.id.clone()),
                _ => voice_notes.push((*n).clone()),
            }
        }
        if options.truncate_overlaps {
            for i in 1..voice_notes.len() {
                let next_onset = voice_notes[i].onset;
                let prev = &mut voice_notes[i - 1];
                if prev.offset() > next_onset {
                    prev.duration = next_onset - prev.onset;
                }
            }
        }
        kept.extend(voice_notes);
    }
    removed.sort();
    Ok((Score::new(score.divisions, score.measures.clone(), kept)?, removed))
}

/// Consecutive-note links of each voice, as `(source, destination)` note
/// indices into a [`Score`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruthLinks {
    pub links: Vec<(usize, usize)>,
}

impl GroundTruthLinks {
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn as_ids<'a>(&self, score: &'a Score) -> Vec<(&'a str, &'a str)> {
        self.links
            .iter()
            .map(|&(u, v)| (score.notes[u].id.as_str(), score.notes[v].id.as_str()))
            .collect()
    }
}

/// Links every note to the next note of its voice.
pub fn derive_ground_truth_links(score: &Score) -> Result<GroundTruthLinks> {
    let mut by_voice: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, n) in score.notes.iter().enumerate() {
        let v = n.voice.ok_or_else(|| Error::MissingVoice(n.id.clone()))?;
        by_voice.entry(v).or_default().push(i);
    }
    let mut links = Vec::new();
    for (voice, mut idx) in by_voice {
        // Notes are already onset-sorted; the stable sort only documents intent.
        idx.sort_by_key(|&i| score.notes[i].onset);
        for pair in idx.windows(2) {
            let (a, b) = (&score.notes[pair[0]], &score.notes[pair[1]]);
            if a.onset == b.onset {
                return Err(Error::NotMonophonic { voice, onset: a.onset });
            }
            links.push((pair[0], pair[1]));
        }
    }
    links.sort_unstable();
    Ok(GroundTruthLinks { links })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Four notes in one 4/4 measure pair: u and x form voice 0, v and w voice 1.
    pub fn four_notes() -> Score {
        let json = br#"{
            "divisions": 4,
            "measures": [{"index": 0, "onset": 0, "duration": 16}, {"index": 1, "onset": 16, "duration": 16}],
            "notes": [
                {"id": "u", "onset": 0, "duration": 8, "pitch": 60, "voice": 0},
                {"id": "v", "onset": 0, "duration": 4, "pitch": 67, "voice": 1},
                {"id": "w", "onset": 4, "duration": 4, "pitch": 64, "voice": 1},
                {"id": "x", "onset": 12, "duration": 4, "pitch": 62, "voice": 0}
            ]
        }"#;
        parse_score(json).unwrap()
    }

    pub fn note(id: &str, onset: u64, duration: u64, pitch: u8, voice: Option<u32>) -> Note {
        Note {
            id: id.into(),
            onset,
            duration,
            pitch,
            voice,
        }
    }

    pub fn measures(count: u64, length: u64) -> Vec<Measure> {
        (0..count)
            .map(|i| Measure {
                index: i as i64,
                onset: i * length,
                duration: length,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn minimal_file() {
        let s = parse_score(
            br#"{"divisions": 1, "measures": [{"index": 1, "onset": 0, "duration": 4}],
                "notes": [{"id": "a", "onset": 0, "duration": 1, "pitch": 0, "voice": null}]}"#,
        )
        .unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.notes[0].voice, None);
    }

    #[test]
    fn measure_gap_is_rejected() {
        let err = parse_score(
            br#"{"divisions": 4, "measures": [{"index": 0, "onset": 0, "duration": 16},
                {"index": 1, "onset": 16, "duration": 16}, {"index": 2, "onset": 40, "duration": 16}],
                "notes": []}"#,
        )
        .unwrap_err();
        match err {
            Error::Validation { field, .. } => assert_eq!(field, "measures[2].onset"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn field_level_errors() {
        let bad_pitch = br#"{"divisions": 4, "measures": [{"index": 0, "onset": 0, "duration": 16}],
            "notes": [{"id": "a", "onset": 0, "duration": 4, "pitch": 128, "voice": 0}]}"#;
        assert!(matches!(parse_score(bad_pitch), Err(Error::Validation { field, .. }) if field == "notes[0].pitch"));
        let zero_dur = br#"{"divisions": 4, "measures": [{"index": 0, "onset": 0, "duration": 16}],
            "notes": [{"id": "a", "onset": 0, "duration": 0, "pitch": 60, "voice": 0}]}"#;
        assert!(matches!(parse_score(zero_dur), Err(Error::Validation { field, .. }) if field == "notes[0].duration"));
        let outside = br#"{"divisions": 4, "measures": [{"index": 0, "onset": 0, "duration": 16}],
            "notes": [{"id": "a", "onset": 16, "duration": 4, "pitch": 60, "voice": 0}]}"#;
        assert!(matches!(parse_score(outside), Err(Error::Validation { field, .. }) if field == "notes[0].onset"));
        assert!(matches!(parse_score(b"{not json"), Err(Error::Parse(_))));
    }

    #[test]
    fn four_note_example_sorted() {
        let s = four_notes();
        let ids: Vec<_> = s.notes.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["u", "v", "w", "x"]);
        assert_eq!(s.note_measures(), vec![0, 0, 0, 0]);
    }

    #[test]
    fn csv_with_sidecar() {
        let csv = b"id,onset,duration,pitch,voice\nb,4,4,62,\na,0,4,60,0\n";
        let side = br#"{"divisions": 4, "measures": [{"index": 0, "onset": 0, "duration": 16}]}"#;
        let s = parse_score_csv(csv, side).unwrap();
        assert_eq!(s.notes[0].id, "a");
        assert_eq!(s.notes[1].voice, None);
        assert!(matches!(parse_score_csv(b"id,pitch\n", side), Err(Error::Parse(_))));
    }

    #[test]
    fn chord_in_voice_keeps_highest() {
        let s = Score::new(
            4,
            measures(1, 16),
            vec![note("lo", 0, 4, 60, Some(0)), note("hi", 0, 4, 64, Some(0))],
        )
        .unwrap();
        let (p, removed) = preprocess_monophonic(&s, PreprocessOptions::default()).unwrap();
        assert_eq!(removed, ["lo"]);
        assert_eq!(p.notes, vec![note("hi", 0, 4, 64, Some(0))]);
    }

    #[test]
    fn equal_pitch_tie_prefers_longest_then_smallest_id() {
        let s = Score::new(
            4,
            measures(1, 16),
            vec![
                note("b", 0, 8, 60, Some(0)),
                note("a", 0, 4, 60, Some(0)),
                note("c", 0, 8, 60, Some(0)),
            ],
        )
        .unwrap();
        let (p, removed) = preprocess_monophonic(&s, PreprocessOptions::default()).unwrap();
        assert_eq!(p.notes[0].id, "b");
        assert_eq!(removed, ["a", "c"]);
    }

    #[test]
    fn monophonic_voice_is_fixpoint() {
        let s = four_notes();
        let (p, removed) = preprocess_monophonic(&s, PreprocessOptions::default()).unwrap();
        assert!(removed.is_empty());
        assert_eq!(p, s);
    }

    #[test]
    fn overlap_truncation() {
        let s = Score::new(
            4,
            measures(1, 16),
            vec![note("a", 0, 8, 60, Some(0)), note("b", 4, 4, 62, Some(0))],
        )
        .unwrap();
        let (p, _) = preprocess_monophonic(&s, PreprocessOptions::default()).unwrap();
        assert_eq!(p.notes[0], note("a", 0, 4, 60, Some(0)));
        let (literal, _) = preprocess_monophonic(&s, PreprocessOptions { truncate_overlaps: false }).unwrap();
        assert_eq!(literal.notes[0].duration, 8);
    }

    #[test]
    fn preprocess_requires_voices() {
        let s = Score::new(4, measures(1, 16), vec![note("a", 0, 4, 60, None)]).unwrap();
        assert!(matches!(preprocess_monophonic(&s, Default::default()), Err(Error::MissingVoice(id)) if id == "a"));
    }

    #[test]
    fn ground_truth_of_four_note_example() {
        let s = four_notes();
        let gt = derive_ground_truth_links(&s).unwrap();
        assert_eq!(gt.as_ids(&s), vec![("u", "x"), ("v", "w")]);
    }

    #[test]
    fn ground_truth_edge_cases() {
        let singles = Score::new(
            4,
            measures(1, 16),
            vec![note("a", 0, 4, 60, Some(0)), note("b", 4, 4, 62, Some(1))],
        )
        .unwrap();
        assert!(derive_ground_truth_links(&singles).unwrap().is_empty());

        let path = Score::new(
            4,
            measures(2, 16),
            (0..6).map(|i| note(&format!("n{i}"), i * 4, 4, 60, Some(3))).collect(),
        )
        .unwrap();
        let gt = derive_ground_truth_links(&path).unwrap();
        assert_eq!(gt.links, vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]);

        let chord = Score::new(
            4,
            measures(1, 16),
            vec![note("a", 0, 4, 60, Some(0)), note("b", 0, 4, 64, Some(0))],
        )
        .unwrap();
        assert!(matches!(derive_ground_truth_links(&chord), Err(Error::NotMonophonic { voice: 0, onset: 0 })));
    }
}
