use std::path::Path;

use voicelink::model::ModelConfig;
use voicelink::pipeline::{predict_score, train, ExperimentConfig, Piece, Postprocess};
use voicelink::score::{parse_score, Score};
use voicelink::synth::{synthetic_corpus, CorpusSpec};

const FOUR_NOTES: &str = r#"{"divisions": 4, "measures": [{"index": 0, "onset": 0, "duration": 16}],
 "notes": [
  {"id": "u", "onset": 0, "duration": 4, "pitch": 60, "voice": 0},
  {"id": "v", "onset": 0, "duration": 8, "pitch": 64, "voice": 1},
  {"id": "w", "onset": 8, "duration": 4, "pitch": 62, "voice": 1},
  {"id": "x", "onset": 4, "duration": 4, "pitch": 59, "voice": 0}]}"#;

#[test]
fn shipped_corpus_matches_its_seeds() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/corpus");
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    let spec: CorpusSpec = serde_json::from_value(manifest["spec"].clone()).unwrap();
    let corpus = synthetic_corpus(&spec).unwrap();
    assert_eq!(manifest["pieces"].as_array().unwrap().len(), corpus.len());
    assert!(corpus.iter().filter(|e| e.split == "train").count() >= 20);
    assert_eq!(corpus.iter().filter(|e| e.split == "test").count(), 5);
    for entry in corpus {
        assert!((2..=4).contains(&entry.voices));
        let shipped = std::fs::read_to_string(dir.join(format!("{}.json", entry.name))).unwrap();
        assert_eq!(shipped, entry.score.unwrap().to_json(), "{}", entry.name);
    }
}

fn unlabelled(s: &Score) -> Score {
    let notes = s.notes.iter().map(|n| voicelink::score::Note { voice: None, ..n.clone() }).collect();
    Score::new(s.divisions, s.measures.clone(), notes).unwrap()
}

#[test]
fn overfit_four_notes_then_predict() {
    let score = parse_score(FOUR_NOTES.as_bytes()).unwrap();
    let mut config = ExperimentConfig::default();
    config.model = ModelConfig {
        hidden: 16,
        jk_hidden: 8,
        ..Default::default()
    };
    config.features.random_pe_signs = false;
    config.training.epochs = 200;
    config.training.patience = 200;
    config.training.stop_at_f1 = Some(1.0);
    let piece = Piece::prepare("four", &score, &config).unwrap();
    let out = train(&config, std::slice::from_ref(&piece), &[], |_| {}).unwrap();
    assert_eq!(out.best_f1, 1.0);

    let first = predict_score(&out.model, &unlabelled(&score), &config, Postprocess::La).unwrap();
    let mut voices = first.voices.voices.clone();
    voices.sort();
    assert_eq!(voices, vec![vec!["u".to_string(), "x".into()], vec!["v".into(), "w".into()]]);

    // Feeding the voiced output back in re-derives the same links.
    let again = predict_score(&out.model, &first.voiced, &config, Postprocess::La).unwrap();
    assert_eq!(again.links, first.links);
    assert_eq!(again.voiced, first.voiced);
}

#[test]
fn single_note_is_one_voice() {
    let score = parse_score(
        br#"{"divisions": 1, "measures": [{"index": 0, "onset": 0, "duration": 4}],
             "notes": [{"id": "a", "onset": 0, "duration": 1, "pitch": 70}]}"#,
    )
    .unwrap();
    let config = ExperimentConfig::default();
    let model = voicelink::model::VoiceModel::new(config.model.clone()).unwrap();
    let p = predict_score(&model, &score, &config, Postprocess::La).unwrap();
    assert_eq!(p.voices.voices, vec![vec!["a".to_string()]]);
}
