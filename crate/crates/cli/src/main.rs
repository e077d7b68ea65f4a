use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use voicelink::export::{graph_dot, measure_range, pianoroll_svg, SvgOptions};
use voicelink::features::assemble_features;
use voicelink::graph::ScoreGraph;
use voicelink::losses::RegSchedule;
use voicelink::pipeline::{
    evaluate, load_checkpoint, load_pieces, predict_score, resolve_splits, run_training, write_atomic, EvalMode,
    ExperimentConfig, FeatureConfig, Postprocess,
};
use voicelink::score::{derive_ground_truth_links, parse_score, parse_score_csv, Score};
use voicelink::synth::{generate_synthetic_score, synthetic_corpus, CorpusSpec, SynthConfig};
use voicelink::Error;

type Result<T> = std::result::Result<T, Error>;

/// Voice separation of symbolic music by link prediction.
#[derive(Parser)]
#[command(name = "voicelink", version)]
struct Cli {
    /// Root against which corpus directories are resolved.
    #[arg(long, env = "VOICELINK_DATA_ROOT", default_value = ".", global = true)]
    data_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic labelled scores.
    Generate(GenerateArgs),
    /// Edge statistics of a score graph, optionally as DOT.
    Graph(GraphArgs),
    /// Dump the node feature matrix.
    Features(FeaturesArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Separate the voices of a score with a trained checkpoint.
    Predict(PredictArgs),
    /// Link metrics of a checkpoint on labelled pieces.
    Eval(EvalArgs),
    /// Render a score as an SVG pianoroll or its graph as DOT.
    Export(ExportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory for a corpus, or output file with `--single`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write one piece instead of a corpus.
    #[arg(long)]
    single: bool,
    #[arg(long, default_value_t = 1000)]
    seed: u64,
    /// Voices of the single piece.
    #[arg(long, default_value_t = 3)]
    voices: usize,
    #[arg(long, default_value_t = 30)]
    notes_per_voice: usize,
    #[arg(long, default_value_t = 22)]
    train_pieces: usize,
    #[arg(long, default_value_t = 5)]
    test_pieces: usize,
    #[arg(long, default_value_t = 2)]
    min_voices: usize,
    #[arg(long, default_value_t = 4)]
    max_voices: usize,
}

#[derive(Args)]
struct GraphOverrides {
    #[arg(long)]
    window: Option<i64>,
    #[arg(long)]
    during_inclusive: bool,
    #[arg(long)]
    silence_last_offset: bool,
}

impl GraphOverrides {
    fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(w) = self.window {
            config.graph.window_measures = w;
        }
        config.graph.during_inclusive |= self.during_inclusive;
        config.graph.silence_last_offset |= self.silence_last_offset;
    }
}

#[derive(Args)]
struct GraphArgs {
    score: PathBuf,
    /// Statistics JSON destination (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the typed graph as DOT.
    #[arg(long)]
    dot: Option<PathBuf>,
    #[command(flatten)]
    graph: GraphOverrides,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatrixFormat {
    Bin,
    Csv,
}

#[derive(Args)]
struct FeaturesArgs {
    score: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "bin")]
    format: MatrixFormat,
    #[arg(long)]
    pe_dim: Option<usize>,
    #[command(flatten)]
    graph: GraphOverrides,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegKind {
    Ramp,
    Fixed,
    Off,
}

#[derive(Args)]
struct ConfigOverrides {
    /// TOML or JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    /// One shared relation instead of typed message passing.
    #[arg(long)]
    homogeneous: bool,
    #[arg(long, value_enum)]
    regularization: Option<RegKind>,
    /// Weight for `--regularization fixed`, or the ramp ceiling.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Disable random positional-encoding sign flips during training.
    #[arg(long)]
    no_pe_flips: bool,
}

impl ConfigOverrides {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::from_path(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.corpus_dir {
            c.data.corpus_dir = Some(d.clone());
        }
        if let Some(v) = self.epochs {
            c.training.epochs = v;
        }
        if let Some(v) = self.patience {
            c.training.patience = v;
        }
        if let Some(v) = self.seed {
            c.training.seed = v;
            c.model.seed = v;
        }
        if let Some(v) = self.lr {
            c.optimizer.lr = v;
        }
        if let Some(v) = self.weight_decay {
            c.optimizer.weight_decay = v;
        }
        if let Some(v) = self.hidden {
            c.model.hidden = v;
        }
        c.model.heterogeneous &= !self.homogeneous;
        c.features.random_pe_signs &= !self.no_pe_flips;
        match (self.regularization, self.alpha) {
            (Some(RegKind::Off), _) => c.regularization = RegSchedule::Off,
            (Some(RegKind::Fixed), alpha) => c.regularization = RegSchedule::Fixed { alpha: alpha.unwrap_or(1.0) },
            (Some(RegKind::Ramp), alpha) => {
                c.regularization = RegSchedule::Ramp {
                    rate: 0.02,
                    max: alpha.unwrap_or(1.0),
                }
            }
            (None, Some(alpha)) => match &mut c.regularization {
                RegSchedule::Fixed { alpha: a } => *a = alpha,
                RegSchedule::Ramp { max, .. } => *max = alpha,
                RegSchedule::Off => return Err(Error::Config("--alpha given but regularization is off".into())),
            },
            (None, None) => {}
        }
        if let Some(v) = self.tau {
            c.tau = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigOverrides,
    /// Directory for best.ckpt, train_log.csv and config.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PostprocessArg {
    None,
    Greedy,
    La,
}

impl From<PostprocessArg> for Postprocess {
    fn from(p: PostprocessArg) -> Self {
        match p {
            PostprocessArg::None => Postprocess::None,
            PostprocessArg::Greedy => Postprocess::Greedy,
            PostprocessArg::La => Postprocess::La,
        }
    }
}

#[derive(Args)]
struct PredictArgs {
    score: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum)]
    postprocess: Option<PostprocessArg>,
    #[arg(long)]
    tau: Option<f64>,
    /// Voiced score JSON destination (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Links JSON destination.
    #[arg(long)]
    links: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Greedy,
    La,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    config: ConfigOverrides,
    /// Pieces to score (names under the corpus directory); overrides `--split`.
    #[arg(long, value_delimiter = ',')]
    pieces: Vec<String>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, value_enum, default_value = "both")]
    mode: ModeArg,
    /// Report JSON destination (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Svg,
    Dot,
}

#[derive(Args)]
struct ExportArgs {
    score: PathBuf,
    #[arg(long, value_enum, default_value = "svg")]
    format: ExportFormat,
    #[arg(long)]
    out: PathBuf,
    /// Links JSON (as written by `predict`) drawn as arrows; defaults to the
    /// ground-truth links of a labelled score.
    #[arg(long)]
    links: Option<PathBuf>,
    /// Inclusive measure range `FIRST:LAST` (0-based positions).
    #[arg(long)]
    measures: Option<String>,
    #[command(flatten)]
    graph: GraphOverrides,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for bad input, 3 for failures while doing the work.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse(_)
        | Error::Validation { .. }
        | Error::MissingVoice(_)
        | Error::NotMonophonic { .. }
        | Error::Config(_)
        | Error::Consistency(_)
        | Error::Degree { .. }
        | Error::Size(_) => 2,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(&cli.data_root, a),
        Command::Graph(a) => graph(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train(&cli.data_root, a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(&cli.data_root, a),
        Command::Export(a) => export(a),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// JSON scores, or CSV scores with a `<file>.measures.json` sidecar.
fn load_score(path: &Path) -> Result<Score> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if path.extension().is_some_and(|e| e == "csv") {
        let sidecar = path.with_extension("measures.json");
        let measures = fs::read(&sidecar).map_err(|e| io_err(&sidecar, e))?;
        parse_score_csv(&bytes, &measures)
    } else {
        parse_score(&bytes)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty(value: &serde_json::Value) -> String {
    serde_json::to_string_pretty(value).expect("json value serializes") + "\n"
}

fn generate(data_root: &Path, a: GenerateArgs) -> Result<()> {
    let synth = SynthConfig::default();
    if a.single {
        let out = a.out.ok_or_else(|| Error::Config("--single needs --out FILE".into()))?;
        let score = generate_synthetic_score(a.seed, a.voices, a.notes_per_voice, &synth)?;
        return write_atomic(&out, score.to_json().as_bytes());
    }
    let spec = CorpusSpec {
        base_seed: a.seed,
        train_pieces: a.train_pieces,
        test_pieces: a.test_pieces,
        min_voices: a.min_voices,
        max_voices: a.max_voices,
        notes_per_voice: a.notes_per_voice,
        synth,
    };
    let dir = a.out.unwrap_or_else(|| data_root.join("corpus"));
    let corpus = synthetic_corpus(&spec)?;
    for entry in &corpus {
        let score = entry.score.as_ref().expect("generated corpus carries scores");
        write_atomic(&dir.join(format!("{}.json", entry.name)), score.to_json().as_bytes())?;
    }
    let manifest = json!({ "spec": spec, "pieces": corpus });
    write_atomic(&dir.join("manifest.json"), pretty(&manifest).as_bytes())?;
    eprintln!("wrote {} pieces to {}", corpus.len(), dir.display());
    Ok(())
}

fn graph(a: GraphArgs) -> Result<()> {
    let score = load_score(&a.score)?;
    let mut config = ExperimentConfig::default();
    a.graph.apply(&mut config);
    config.validate()?;
    let g = ScoreGraph::build(&score, &config.graph.options())?;
    let counts: BTreeMap<String, usize> = g.relation_counts().into_iter().map(|(r, n)| (r.to_string(), n)).collect();
    let coverage = g.targets.is_some().then(|| g.coverage_report()).transpose()?;
    let stats = json!({
        "nodes": g.num_nodes(),
        "edges": g.edges.len(),
        "relations": counts,
        "candidates": g.candidates.len(),
        "coverage": coverage,
    });
    if let Some(dot) = &a.dot {
        write_atomic(dot, graph_dot(&score, &g)?.as_bytes())?;
    }
    emit(a.out.as_deref(), &pretty(&stats))
}

fn features(a: FeaturesArgs) -> Result<()> {
    let score = load_score(&a.score)?;
    let mut config = ExperimentConfig::default();
    a.graph.apply(&mut config);
    if let Some(k) = a.pe_dim {
        config.features.pe_dim = k;
    }
    let g = ScoreGraph::build(&score, &config.graph.options())?;
    let x = assemble_features(&score, &g, &config.features.pe_options())?;
    let mut buf = Vec::new();
    match a.format {
        MatrixFormat::Bin => x.write_binary(&mut buf),
        MatrixFormat::Csv => x.write_csv(&mut buf),
    }
    .map_err(|e| io_err(&a.out, e))?;
    write_atomic(&a.out, &buf)
}

fn train(data_root: &Path, a: TrainArgs) -> Result<()> {
    let mut config = a.config.load()?;
    if let Some(out) = a.out {
        config.training.checkpoint_dir = Some(out);
    }
    let quiet = a.quiet;
    let artifacts = run_training(&config, data_root, |r| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  clf {:>9.4}  reg {:>8.4}  alpha {:.2}  val P {:.4} R {:.4} F1 {:.4}",
                r.epoch, r.clf_loss, r.reg_loss, r.alpha, r.val_precision, r.val_recall, r.val_f1
            );
        }
    })?;
    eprintln!(
        "best epoch {} (val F1 {:.4}); checkpoint {}",
        artifacts.outcome.best_epoch,
        artifacts.outcome.best_f1,
        artifacts.checkpoint.display()
    );
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let (model, mut config) = load_checkpoint(&a.checkpoint, None)?;
    if let Some(t) = a.tau {
        config.tau = t;
    }
    config.validate()?;
    let mode = a.postprocess.map_or(config.postprocess, Postprocess::from);
    let score = load_score(&a.score)?;
    let prediction = predict_score(&model, &score, &config, mode)?;
    if let Some(links) = &a.links {
        write_atomic(links, prediction.links_json().as_bytes())?;
    }
    emit(a.out.as_deref(), &prediction.voiced.to_json())
}

fn eval(data_root: &Path, a: EvalArgs) -> Result<()> {
    let config = a.config.load()?;
    let expected = a.config.config.is_some().then_some(&config);
    let (model, loaded) = load_checkpoint(&a.checkpoint, expected)?;
    let config = ExperimentConfig {
        model: loaded.model,
        graph: loaded.graph,
        features: FeatureConfig {
            pe_dim: loaded.features.pe_dim,
            ..config.features.clone()
        },
        ..config
    };
    let names = if a.pieces.is_empty() {
        let (train, val, test) = resolve_splits(&config.data)?;
        match a.split {
            SplitArg::Train => train,
            SplitArg::Val => val,
            SplitArg::Test => test,
        }
    } else {
        a.pieces
    };
    if names.is_empty() {
        return Err(Error::Config("no pieces to evaluate".into()));
    }
    let corpus = data_root.join(config.data.corpus_dir.clone().unwrap_or_else(|| PathBuf::from(".")));
    let pieces = load_pieces(&corpus, &names, &config)?;
    if let Some(p) = pieces.iter().find(|p| !p.is_labelled()) {
        return Err(Error::MissingVoice(format!("piece {} is unlabelled", p.name)));
    }
    let mode = match a.mode {
        ModeArg::Greedy => EvalMode::Greedy,
        ModeArg::La => EvalMode::La,
        ModeArg::Both => EvalMode::Both,
    };
    let report = evaluate(&model, &pieces, config.tau, mode)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    emit(a.out.as_deref(), &text)
}

/// `FIRST:LAST` into positions.
fn parse_range(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Validation {
        field: "measures".into(),
        message: format!("expected FIRST:LAST, got {s:?}"),
    };
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// Links JSON `{"links": [[src_id, dst_id, score], ...]}` as note positions.
/// Links touching notes outside `score` (e.g. cut off by a measure range)
/// are skipped.
fn read_links(path: &Path, score: &Score) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let rows = value["links"]
        .as_array()
        .ok_or_else(|| Error::Parse(format!("{}: missing \"links\" array", path.display())))?;
    let mut links = Vec::new();
    for row in rows {
        let (Some(u), Some(v)) = (row[0].as_str(), row[1].as_str()) else {
            return Err(Error::Parse(format!("{}: link endpoints must be note ids", path.display())));
        };
        if let (Some(u), Some(v)) = (score.index_of(u), score.index_of(v)) {
            links.push((u, v));
        }
    }
    Ok(links)
}

fn export(a: ExportArgs) -> Result<()> {
    let full = load_score(&a.score)?;
    let score = match &a.measures {
        Some(r) => {
            let (first, last) = parse_range(r)?;
            measure_range(&full, first, last)?
        }
        None => full,
    };
    let text = match a.format {
        ExportFormat::Svg => {
            let links = match &a.links {
                Some(path) => read_links(path, &score)?,
                None if score.has_voices() && !score.is_empty() => derive_ground_truth_links(&score)?.links,
                None => Vec::new(),
            };
            pianoroll_svg(&score, &links, None, &SvgOptions::default())
        }
        ExportFormat::Dot => {
            let mut config = ExperimentConfig::default();
            a.graph.apply(&mut config);
            config.validate()?;
            graph_dot(&score, &ScoreGraph::build(&score, &config.graph.options())?)?
        }
    };
    write_atomic(&a.out, text.as_bytes())
}
