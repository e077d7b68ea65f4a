//! Experiment configuration, training, evaluation and prediction.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use voicelink_autodiff::{read_checkpoint, write_checkpoint, AdamW, AdamWConfig, Tape};

use crate::assignment::{
    apply_mask_and_threshold, check_degrees, extract_voices, linear_assignment, resolve_greedy, VoiceAssignment,
};
use crate::error::{Error, Result};
use crate::features::{assemble_features, FeatureMatrix, PeOptions, INTRINSIC_COLS};
use crate::graph::{GraphOptions, ScoreGraph};
use crate::losses::{bce_loss, reg_loss, subsample_negatives, total_loss, IndicatorVectors, RegSchedule};
use crate::metrics::{link_metrics, MetricsReport, PieceMetrics};
use crate::model::{threshold_links, GraphTensors, LinkScores, ModelConfig, VoiceModel};
use crate::score::{derive_ground_truth_links, parse_score, preprocess_monophonic, PreprocessOptions, Score};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding `<name>.json` scores. Relative paths resolve
    /// against the data root.
    pub corpus_dir: Option<PathBuf>,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    /// Fraction of `train` held out for validation when `val` is empty.
    pub val_fraction: f64,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            corpus_dir: None,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            val_fraction: 0.1,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub window_measures: i64,
    pub during_inclusive: bool,
    pub silence_last_offset: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            window_measures: 2,
            during_inclusive: false,
            silence_last_offset: false,
        }
    }
}

impl GraphConfig {
    pub fn options(&self) -> GraphOptions {
        GraphOptions {
            during_inclusive: self.during_inclusive,
            silence_last_offset: self.silence_last_offset,
            window_measures: self.window_measures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub pe_dim: usize,
    /// Graphs above this size use the iterative eigensolver.
    pub dense_eigen_limit: usize,
    /// Flip positional-encoding column signs at random during training.
    pub random_pe_signs: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            pe_dim: 20,
            dense_eigen_limit: 2000,
            random_pe_signs: true,
        }
    }
}

impl FeatureConfig {
    pub fn pe_options(&self) -> PeOptions {
        PeOptions {
            k: self.pe_dim,
            dense_limit: self.dense_eigen_limit,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = AdamWConfig::default();
        Self {
            lr: d.lr,
            weight_decay: d.weight_decay,
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
        }
    }
}

impl From<OptimizerConfig> for AdamWConfig {
    fn from(c: OptimizerConfig) -> Self {
        AdamWConfig {
            lr: c.lr,
            weight_decay: c.weight_decay,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Stop as soon as validation F1 reaches this value.
    pub stop_at_f1: Option<f64>,
    pub shuffle: bool,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            patience: 20,
            seed: 0,
            stop_at_f1: None,
            shuffle: true,
            checkpoint_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Postprocess {
    /// Plain thresholding; voice extraction fails on degree conflicts.
    None,
    #[default]
    Greedy,
    La,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Greedy,
    La,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub graph: GraphConfig,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub regularization: RegSchedule,
    pub training: TrainConfig,
    pub tau: f64,
    pub postprocess: Postprocess,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            graph: GraphConfig::default(),
            features: FeatureConfig::default(),
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            regularization: RegSchedule::default(),
            training: TrainConfig::default(),
            tau: 0.5,
            postprocess: Postprocess::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.model.input_dim != INTRINSIC_COLS + self.features.pe_dim {
            return Err(Error::Config(format!(
                "model.input_dim {} must equal {INTRINSIC_COLS} + features.pe_dim {}",
                self.model.input_dim, self.features.pe_dim
            )));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.graph.window_measures < 0 {
            return Err(Error::Config("graph.window_measures must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.data.val_fraction) {
            return Err(Error::Config("data.val_fraction must lie in [0, 1)".into()));
        }
        self.regularization.alpha(0)?;
        let mut seen = HashSet::new();
        for name in self.data.train.iter().chain(&self.data.val).chain(&self.data.test) {
            if !seen.insert(name) {
                return Err(Error::Config(format!("piece {name} appears in more than one split")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// A score with everything the network needs, computed once.
#[derive(Debug, Clone)]
pub struct Piece {
    pub name: String,
    pub score: Score,
    pub graph: ScoreGraph,
    pub features: FeatureMatrix,
    pub inputs: GraphTensors,
    /// All ground-truth links (empty for unlabelled scores).
    pub targets: Vec<(usize, usize)>,
    /// Ground-truth links inside the candidate set.
    pub covered: Vec<(usize, usize)>,
}

impl Piece {
    /// Labelled scores are made monophonic per voice first.
    pub fn prepare(name: impl Into<String>, score: &Score, config: &ExperimentConfig) -> Result<Self> {
        let score = if score.has_voices() {
            preprocess_monophonic(score, PreprocessOptions::default())?.0
        } else {
            score.clone()
        };
        let graph = ScoreGraph::build(&score, &config.graph.options())?;
        let features = assemble_features(&score, &graph, &config.features.pe_options())?;
        let inputs = GraphTensors::new(&graph, &features, config.model.heterogeneous)?;
        let targets = if score.has_voices() && !score.is_empty() {
            derive_ground_truth_links(&score)?.links
        } else {
            Vec::new()
        };
        let candidate_set: HashSet<_> = graph.candidates.iter().copied().collect();
        let covered = targets.iter().copied().filter(|l| candidate_set.contains(l)).collect();
        Ok(Self {
            name: name.into(),
            score,
            graph,
            features,
            inputs,
            targets,
            covered,
        })
    }

    pub fn is_labelled(&self) -> bool {
        self.score.has_voices()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over pieces of the summed classification loss.
    pub clf_loss: f64,
    pub reg_loss: f64,
    pub alpha: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation F1.
    pub model: VoiceModel,
    pub optimizer: AdamW,
    pub best_epoch: usize,
    pub best_f1: f64,
    pub log: Vec<EpochLog>,
}

fn seed_for_piece(seed: u64, piece: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(piece as u64)
}

/// One optimizer step per training piece and epoch. Validation uses plain
/// thresholding; with no validation pieces the training pieces are scored
/// instead. `on_epoch` sees each log row as it is produced.
pub fn train(config: &ExperimentConfig, train_set: &[Piece], val_set: &[Piece], mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if let Some(p) = train_set.iter().find(|p| !p.is_labelled()) {
        return Err(Error::MissingVoice(format!("training piece {} is unlabelled", p.name)));
    }
    let mut model = VoiceModel::new(config.model.clone())?;
    let mut optimizer = AdamW::for_params(config.optimizer.into(), &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.training.seed);
    let indicators: Vec<_> = train_set
        .iter()
        .map(|p| IndicatorVectors::from_links(p.inputs.num_nodes, &p.covered))
        .collect::<Result<_>>()?;
    let monitor = if val_set.is_empty() { train_set } else { val_set };

    let mut best: Option<(f64, usize, VoiceModel, AdamW)> = None;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.training.epochs {
        let alpha = config.regularization.alpha(epoch)?;
        if config.training.shuffle {
            order.shuffle(&mut rng);
        }
        let (mut clf_sum, mut reg_sum) = (0.0, 0.0);
        for &i in &order {
            let piece = &train_set[i];
            if piece.inputs.num_nodes == 0 {
                continue;
            }
            let flipped;
            let inputs = if config.features.random_pe_signs {
                flipped = piece.inputs.with_features(piece.features.with_random_pe_signs(&mut rng).values);
                &flipped
            } else {
                &piece.inputs
            };
            let mut tape = Tape::new();
            let dropout_rng = (config.model.dropout > 0.0).then_some(&mut rng);
            let probs = model.forward(&mut tape, inputs, dropout_rng)?;
            let batch = subsample_negatives(&piece.graph.candidates, &piece.covered, seed_for_piece(config.training.seed, i), epoch as u64);
            let clf = bce_loss(&mut tape, probs, &batch)?;
            let reg = reg_loss(&mut tape, probs, &inputs.cand_src, &inputs.cand_dst, &indicators[i])?;
            let loss = total_loss(&mut tape, clf, reg, alpha)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    piece: piece.name.clone(),
                    message: format!("loss is {value}"),
                });
            }
            clf_sum += tape.value(clf).item();
            reg_sum += tape.value(reg).item();
            model.params.zero_grads();
            tape.backward(loss)?.accumulate_into(&mut model.params);
            if !model.params.grads_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    piece: piece.name.clone(),
                    message: "non-finite gradient".into(),
                });
            }
            optimizer.step(&mut model.params)?;
        }
        let report = evaluate_pieces(&model, monitor, config.tau, Postprocess::None)?;
        let n = train_set.len() as f64;
        let row = EpochLog {
            epoch,
            clf_loss: clf_sum / n,
            reg_loss: reg_sum / n,
            alpha,
            val_precision: report.micro.precision,
            val_recall: report.micro.recall,
            val_f1: report.micro.f1,
        };
        on_epoch(&row);
        log.push(row);
        let f1 = report.micro.f1;
        if best.as_ref().map_or(true, |b| f1 > b.0) {
            best = Some((f1, epoch, model.clone(), optimizer.clone()));
        }
        let (best_f1, best_epoch) = best.as_ref().map(|b| (b.0, b.1)).expect("set above");
        if config.training.stop_at_f1.is_some_and(|t| best_f1 >= t) || epoch - best_epoch >= config.training.patience {
            break;
        }
    }
    let (best_f1, best_epoch, model, optimizer) = best.ok_or_else(|| Error::Config("training.epochs must be positive".into()))?;
    Ok(TrainOutcome {
        model,
        optimizer,
        best_epoch,
        best_f1,
        log,
    })
}

/// Predicted links for one piece under a postprocessing mode, sorted.
pub fn predict_links(model: &VoiceModel, piece: &Piece, tau: f64, mode: Postprocess) -> Result<(LinkScores, Vec<(usize, usize)>)> {
    let scores = model.predict_links(&piece.inputs)?;
    let links = match mode {
        Postprocess::None => threshold_links(&scores, tau),
        Postprocess::Greedy => resolve_greedy(&scores, &piece.graph.node_ids, tau),
        Postprocess::La => {
            let mask = linear_assignment(&scores);
            let links = apply_mask_and_threshold(&scores, &mask, tau);
            check_degrees(&piece.score, &links)?;
            links
        }
    };
    Ok((scores, links))
}

/// Link metrics over labelled pieces.
pub fn evaluate_pieces(model: &VoiceModel, pieces: &[Piece], tau: f64, mode: Postprocess) -> Result<MetricsReport> {
    let mut rows = Vec::with_capacity(pieces.len());
    for piece in pieces {
        if !piece.is_labelled() {
            return Err(Error::MissingVoice(format!("evaluation piece {} is unlabelled", piece.name)));
        }
        let (_, links) = predict_links(model, piece, tau, mode)?;
        rows.push(PieceMetrics {
            piece: piece.name.clone(),
            metrics: link_metrics(&links, &piece.targets),
        });
    }
    Ok(MetricsReport::new(rows))
}

/// Thresholded ("greedy") and/or assignment-postprocessed metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub greedy: Option<MetricsReport>,
    pub la: Option<MetricsReport>,
}

pub fn evaluate(model: &VoiceModel, pieces: &[Piece], tau: f64, mode: EvalMode) -> Result<EvalReport> {
    let greedy = matches!(mode, EvalMode::Greedy | EvalMode::Both)
        .then(|| evaluate_pieces(model, pieces, tau, Postprocess::None))
        .transpose()?;
    let la = matches!(mode, EvalMode::La | EvalMode::Both)
        .then(|| evaluate_pieces(model, pieces, tau, Postprocess::La))
        .transpose()?;
    Ok(EvalReport { greedy, la })
}

/// Output of the full inference pipeline on one score.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub scores: LinkScores,
    pub links: Vec<(usize, usize)>,
    pub voices: VoiceAssignment,
    /// The input score with predicted voice ids.
    pub voiced: Score,
}

impl Prediction {
    /// `{"links": [[src, dst, score], ...]}` with note ids.
    pub fn links_json(&self) -> String {
        let ids = self.voiced.notes.iter().map(|n| n.id.as_str()).collect::<Vec<_>>();
        let lookup: std::collections::HashMap<_, _> = self.scores.iter().collect();
        let links: Vec<_> = self
            .links
            .iter()
            .map(|l| serde_json::json!([ids[l.0], ids[l.1], lookup.get(l).copied().unwrap_or(0.0)]))
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({ "links": links })).expect("json") + "\n"
    }
}

/// Graph, features, forward pass, postprocessing and voice extraction.
/// Existing voice labels are ignored apart from monophonic cleanup.
pub fn predict_score(model: &VoiceModel, score: &Score, config: &ExperimentConfig, mode: Postprocess) -> Result<Prediction> {
    let piece = Piece::prepare("input", score, config)?;
    let (scores, links) = predict_links(model, &piece, config.tau, mode)?;
    let voices = extract_voices(&piece.score, &links)?;
    let voiced = piece.score.with_voices(&voices.voice_of);
    Ok(Prediction {
        scores,
        links,
        voices,
        voiced,
    })
}

/// Settings a checkpoint must agree on with the config used to load it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    graph: GraphConfig,
    pe_dim: usize,
}

impl CheckpointMeta {
    fn of(config: &ExperimentConfig) -> Self {
        Self {
            model: config.model.clone(),
            graph: config.graph.clone(),
            pe_dim: config.features.pe_dim,
        }
    }
}

pub fn save_checkpoint(path: &Path, config: &ExperimentConfig, model: &VoiceModel, optimizer: Option<&AdamW>) -> Result<()> {
    let meta = serde_json::to_string(&CheckpointMeta::of(config)).expect("meta serializes");
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &meta, &model.params, optimizer)?;
    write_atomic(path, &buf)
}

/// Loads weights. With `expected`, any difference in model, graph or
/// feature settings is a checkpoint error; otherwise the stored settings
/// are adopted into the returned config.
pub fn load_checkpoint(path: &Path, expected: Option<&ExperimentConfig>) -> Result<(VoiceModel, ExperimentConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = read_checkpoint(bytes.as_slice()).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let meta: CheckpointMeta = serde_json::from_str(&ckpt.meta).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
    let mut config = expected.cloned().unwrap_or_default();
    if expected.is_some() && CheckpointMeta::of(&config) != meta {
        return Err(Error::Checkpoint("checkpoint hyperparameters differ from the configuration".into()));
    }
    config.model = meta.model;
    config.graph = meta.graph;
    config.features.pe_dim = meta.pe_dim;
    let mut model = VoiceModel::new(config.model.clone())?;
    model.load_params(&ckpt.params)?;
    Ok((model, config))
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn training_log_csv(log: &[EpochLog]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in log {
        w.serialize(row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
}

pub fn read_score(path: &Path) -> Result<Score> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_score(&bytes)
}

/// Scores named `<name>.json` under `dir`, in the given order.
pub fn load_pieces(dir: &Path, names: &[String], config: &ExperimentConfig) -> Result<Vec<Piece>> {
    names
        .iter()
        .map(|name| {
            let score = read_score(&dir.join(format!("{name}.json")))?;
            Piece::prepare(name.clone(), &score, config)
        })
        .collect()
}

/// Train/validation/test piece names. Without explicit validation pieces a
/// seeded `val_fraction` of the training list is held out.
pub fn resolve_splits(data: &DataConfig) -> Result<(Vec<String>, Vec<String>, Vec<String>)> {
    if data.train.is_empty() {
        return Err(Error::Config("data.train lists no pieces".into()));
    }
    let mut train = data.train.clone();
    let mut val = data.val.clone();
    if val.is_empty() && data.val_fraction > 0.0 {
        let k = ((train.len() as f64) * data.val_fraction).round() as usize;
        if k > 0 && k < train.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(data.split_seed);
            train.shuffle(&mut rng);
            val = train.split_off(train.len() - k);
            train.sort();
            val.sort();
        }
    }
    Ok((train, val, data.test.clone()))
}

/// Everything `train` writes to disk.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub outcome: TrainOutcome,
}

/// Loads the configured corpus, trains, and writes `best.ckpt`,
/// `train_log.csv` and `config.json` into the checkpoint directory.
pub fn run_training(config: &ExperimentConfig, data_root: &Path, on_epoch: impl FnMut(&EpochLog)) -> Result<TrainArtifacts> {
    config.validate()?;
    let corpus = data_root.join(config.data.corpus_dir.clone().unwrap_or_else(|| PathBuf::from(".")));
    let (train_names, val_names, _) = resolve_splits(&config.data)?;
    let train_set = load_pieces(&corpus, &train_names, config)?;
    let val_set = load_pieces(&corpus, &val_names, config)?;
    let outcome = train(config, &train_set, &val_set, on_epoch)?;
    let out_dir = config.training.checkpoint_dir.clone().unwrap_or_else(|| PathBuf::from("checkpoints"));
    let checkpoint = out_dir.join("best.ckpt");
    let log = out_dir.join("train_log.csv");
    save_checkpoint(&checkpoint, config, &outcome.model, Some(&outcome.optimizer))?;
    write_atomic(&log, training_log_csv(&outcome.log).as_bytes())?;
    write_atomic(&out_dir.join("config.json"), config.to_json().as_bytes())?;
    Ok(TrainArtifacts {
        checkpoint,
        log,
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::fixtures::four_notes;
    use crate::synth::{generate_synthetic_score, SynthConfig};

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            model: ModelConfig {
                hidden: 16,
                jk_hidden: 8,
                ..Default::default()
            },
            training: TrainConfig {
                epochs: 3,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let from_toml: ExperimentConfig = toml::from_str("tau = 0.4\n[model]\nhidden = 32\n").unwrap();
        assert_eq!(from_toml.model.hidden, 32);
        assert_eq!(from_toml.tau, 0.4);
    }

    #[test]
    fn invalid_configs() {
        let mut c = ExperimentConfig::default();
        c.features.pe_dim = 10;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ExperimentConfig::default();
        c.data.train = vec!["a".into()];
        c.data.test = vec!["a".into()];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(toml::from_str::<ExperimentConfig>("bogus = 1").is_err());
    }

    #[test]
    fn empty_training_split() {
        assert!(matches!(train(&tiny(), &[], &[], |_| {}), Err(Error::Config(_))));
    }

    #[test]
    fn splits_hold_out_a_fraction() {
        let data = DataConfig {
            train: (0..20).map(|i| format!("p{i:02}")).collect(),
            ..Default::default()
        };
        let (tr, va, _) = resolve_splits(&data).unwrap();
        assert_eq!((tr.len(), va.len()), (18, 2));
        assert!(va.iter().all(|v| !tr.contains(v)));
        assert_eq!(resolve_splits(&data).unwrap().1, va);
    }

    #[test]
    fn training_is_deterministic_and_logged() {
        let c = tiny();
        let pieces: Vec<_> = (0..2)
            .map(|s| Piece::prepare(format!("p{s}"), &generate_synthetic_score(s, 2, 8, &SynthConfig::default()).unwrap(), &c).unwrap())
            .collect();
        let mut seen = 0;
        let a = train(&c, &pieces, &[], |_| seen += 1).unwrap();
        let b = train(&c, &pieces, &[], |_| {}).unwrap();
        assert_eq!(seen, 3);
        assert_eq!(training_log_csv(&a.log), training_log_csv(&b.log));
        assert!(training_log_csv(&a.log).starts_with("epoch,clf_loss,reg_loss,alpha,val_precision,val_recall,val_f1\n"));
        assert_eq!(a.log[0].alpha, 0.0);
    }

    #[test]
    fn oracle_scores_recall_equals_coverage() {
        let c = ExperimentConfig::default();
        let s = generate_synthetic_score(2, 3, 30, &SynthConfig::default()).unwrap();
        let p = Piece::prepare("x", &s, &c).unwrap();
        let truth: HashSet<_> = p.targets.iter().copied().collect();
        let probs = p.graph.candidates.iter().map(|l| if truth.contains(l) { 1.0 } else { 0.0 }).collect();
        let scores = LinkScores::new(p.graph.candidates.clone(), probs);
        let m = link_metrics(&threshold_links(&scores, 0.5), &p.targets);
        let cov = p.graph.coverage_report().unwrap();
        assert_eq!(m.precision, 1.0);
        assert!((m.recall - cov.fraction).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = tiny();
        let model = VoiceModel::new(c.model.clone()).unwrap();
        save_checkpoint(&path, &c, &model, None).unwrap();
        let (back, adopted) = load_checkpoint(&path, None).unwrap();
        assert_eq!(adopted.model, c.model);
        let p = Piece::prepare("f", &four_notes(), &c).unwrap();
        assert_eq!(model.predict_links(&p.inputs).unwrap(), back.predict_links(&p.inputs).unwrap());
        let mut other = c.clone();
        other.model.hidden = 8;
        assert!(matches!(load_checkpoint(&path, Some(&other)), Err(Error::Checkpoint(_))));
        assert!(matches!(load_checkpoint(&dir.path().join("none"), None), Err(Error::Io { .. })));
    }

    #[test]
    fn single_note_prediction() {
        use crate::score::fixtures::{measures, note};
        let s = Score::new(4, measures(1, 16), vec![note("a", 0, 4, 60, None)]).unwrap();
        let c = tiny();
        let model = VoiceModel::new(c.model.clone()).unwrap();
        let p = predict_score(&model, &s, &c, Postprocess::La).unwrap();
        assert_eq!(p.voices.voices, vec![vec!["a".to_string()]]);
        assert_eq!(p.voiced.notes[0].voice, Some(0));
        assert_eq!(p.links_json(), "{\n  \"links\": []\n}\n");
    }
}
