//! `vulnhunter` subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vulnhunter::corpus::{
    dataset_stats, generate_synthetic, load_dataset, split_dataset, write_csv, write_jsonl, DatasetFormat,
    DatasetSplit, LabelRegistry, SplitManifest, SyntheticSpec, VulnRecord, DEFAULT_RATIOS,
};
use vulnhunter::engine::{
    Engine, EngineOptions, NoRepair, RepairProvider, RuleRepair, CLASSIFIER_FILE, DEFAULT_THRESHOLD, DETECTOR_FILE,
    REGRESSOR_FILE, VOCAB_FILE,
};
use vulnhunter::model::{load_checkpoint, save_checkpoint, ModelConfig};
use vulnhunter::tokenizer::Vocab;
use vulnhunter::trainer::{
    compare_moo_weighted, evaluate, save_run, train_classifier, train_detector, train_regressor, TrainConfig,
    TrainMode, TrainedModel,
};

pub const SPLIT_FILE: &str = "split.json";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const DEFAULT_VOCAB_SIZE: usize = 512;

/// Exit codes of `scan` and of every command on failure.
pub const EXIT_CLEAN: u8 = 0;
pub const EXIT_FINDINGS: u8 = 1;
pub const EXIT_ERROR: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "vulnhunter",
    version,
    about = "Find, classify and score vulnerable C/C++ functions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labeled corpus (CSV or JSONL by extension) and its
    /// label registry.
    GenCorpus(GenCorpusArgs),
    /// Print summary statistics of a dataset.
    Stats(StatsArgs),
    /// Train detector, classifier and/or regressor into a model directory.
    Train(TrainArgs),
    /// Train the classifier with both objectives and tabulate the results.
    Compare(CompareArgs),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Analyze source files and report vulnerable functions.
    Scan(ScanArgs),
    /// Run the local HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// Output dataset path; `.jsonl` writes JSON lines, anything else CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of records.
    #[arg(long, default_value_t = 600)]
    pub n: usize,
    #[arg(long, default_value_t = 6)]
    pub cwe_ids: usize,
    #[arg(long, default_value_t = 3)]
    pub cwe_types: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Share of vulnerable records.
    #[arg(long, default_value_t = 0.5)]
    pub vulnerable_fraction: f64,
    /// Registry output; defaults to `<out>.registry.json`.
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Classifier,
    Detector,
    Regressor,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Moo,
    WeightedSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Tiny,
    Desk,
    Paper,
}

/// Options shared by `train` and `compare`.
#[derive(Debug, Args)]
pub struct TrainingArgs {
    /// Dataset (CSV or JSONL).
    #[arg(long)]
    pub data: PathBuf,
    /// Model directory. An existing `vocab.json` there is reused.
    #[arg(long)]
    pub out: PathBuf,
    /// Label registry JSON; defaults to the labels found in the data.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Learning rate (preset default when omitted).
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Stop after this many epochs without validation improvement; 0 disables.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Seed for the split, initialization, shuffling and dropout.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
    pub vocab_size: usize,
    /// Override the preset's maximum sequence length.
    #[arg(long)]
    pub max_seq_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Task::All)]
    pub task: Task,
    /// Classifier objective.
    #[arg(long, value_enum, default_value_t = Mode::Moo)]
    pub mode: Mode,
    /// CWE-ID loss weight for `--mode weighted-sum`.
    #[arg(long, default_value_t = 0.5)]
    pub w1: f64,
    /// CWE-Type loss weight for `--mode weighted-sum`.
    #[arg(long, default_value_t = 0.5)]
    pub w2: f64,
    #[command(flatten)]
    pub common: TrainingArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, default_value_t = 0.5)]
    pub w1: f64,
    #[arg(long, default_value_t = 0.5)]
    pub w2: f64,
    #[command(flatten)]
    pub common: TrainingArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    /// Tokenizer; defaults to `vocab.json` next to the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Split seed; defaults to the one recorded in `split.json` next to the
    /// checkpoint, else 42.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScanFormat {
    Json,
    Sarif,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RepairKind {
    None,
    Rules,
}

/// Options shared by `scan` and `serve`.
#[derive(Debug, Args)]
pub struct EngineArgs {
    /// Model directory written by `train`.
    #[arg(long, env = "VULNHUNTER_MODELS")]
    pub models: PathBuf,
    /// Detector probability needed to report a function.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Ranked lines kept per diagnostic.
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// Repair suggestions.
    #[arg(long, value_enum, default_value_t = RepairKind::None)]
    pub repair: RepairKind,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Files or directories (searched for C/C++ sources).
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, value_enum, default_value_t = ScanFormat::Text)]
    pub format: ScanFormat,
    /// Exit with status 1 when anything is reported.
    #[arg(long)]
    pub fail_on_findings: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, default_value_t = vulnhunter_service::DEFAULT_PORT)]
    pub port: u16,
}

#[derive(Debug)]
pub struct CliError(pub String);

impl<E: std::fmt::Display> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn fail(msg: impl Into<String>) -> CliError {
    CliError(msg.into())
}

/// Run a parsed command line and map the outcome to an exit code.
pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::GenCorpus(a) => gen_corpus(&a).map(|_| EXIT_CLEAN),
        Command::Stats(a) => stats(&a).map(|_| EXIT_CLEAN),
        Command::Train(a) => train(&a).map(|_| EXIT_CLEAN),
        Command::Compare(a) => compare(&a).map(|_| EXIT_CLEAN),
        Command::Eval(a) => eval(&a).map(|_| EXIT_CLEAN),
        Command::Scan(a) => scan(&a),
        Command::Serve(a) => serve(&a).map(|_| EXIT_CLEAN),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(CliError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| fail(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

pub fn gen_corpus(a: &GenCorpusArgs) -> Result<()> {
    let mut spec = SyntheticSpec::new(a.n, a.cwe_ids, a.cwe_types, a.seed);
    spec.vulnerable_fraction = a.vulnerable_fraction;
    let (records, registry) = generate_synthetic(&spec)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = fs::File::create(&a.out).map_err(|e| fail(format!("{}: {e}", a.out.display())))?;
    let w = std::io::BufWriter::new(file);
    match DatasetFormat::from_path(&a.out) {
        DatasetFormat::Csv => write_csv(&records, w)?,
        DatasetFormat::Jsonl => write_jsonl(&records, w)?,
    }
    let reg_path = a.registry.clone().unwrap_or_else(|| registry_path(&a.out));
    registry.save(&reg_path)?;
    eprintln!(
        "wrote {} records ({} vulnerable) to {} and registry to {}",
        records.len(),
        records.iter().filter(|r| r.vulnerable).count(),
        a.out.display(),
        reg_path.display()
    );
    Ok(())
}

/// `<data>.registry.json` next to a dataset.
pub fn registry_path(data: &Path) -> PathBuf {
    let mut name = data.file_name().unwrap_or_default().to_os_string();
    name.push(".registry.json");
    data.with_file_name(name)
}

fn load_records(path: &Path) -> Result<(Vec<VulnRecord>, LabelRegistry)> {
    Ok(load_dataset(path, DatasetFormat::from_path(path))?)
}

pub fn stats(a: &StatsArgs) -> Result<()> {
    let (records, _) = load_records(&a.data)?;
    let s = dataset_stats(&records)?;
    let text = match a.format {
        Format::Text => s.to_text(),
        Format::Json => serde_json::to_string_pretty(&s)? + "\n",
    };
    write_output(None, &text)
}

/// Everything `train` and `compare` need before training starts.
struct Prepared {
    split: DatasetSplit,
    registry: LabelRegistry,
    vocab: Vocab,
    model: ModelConfig,
    cfg: TrainConfig,
}

fn prepare(c: &TrainingArgs) -> Result<Prepared> {
    let (records, found) = load_records(&c.data)?;
    let registry = match &c.registry {
        Some(p) => LabelRegistry::load(p)?,
        None => found,
    };
    for r in records.iter().filter(|r| r.vulnerable) {
        let id = r.cwe_id.as_deref().unwrap_or_default();
        if registry.id_index(id).is_none() {
            return Err(fail(format!("record {}: {id} is not in the registry", r.id)));
        }
    }
    let split = split_dataset(&records, DEFAULT_RATIOS, c.seed)?;
    fs::create_dir_all(&c.out)?;
    fs::write(
        c.out.join(SPLIT_FILE),
        serde_json::to_string_pretty(&split.manifest())? + "\n",
    )?;

    let vocab_path = c.out.join(VOCAB_FILE);
    let vocab = if vocab_path.exists() {
        let v = Vocab::load(&vocab_path)?;
        eprintln!("reusing {} ({} tokens)", vocab_path.display(), v.len());
        v
    } else {
        let texts: Vec<&str> = split.train.iter().map(|r| r.code.as_str()).collect();
        let v = Vocab::train(&texts, c.vocab_size)?;
        v.save(&vocab_path)?;
        v
    };

    let (n_ids, n_types) = (registry.n_ids().max(1), registry.n_types().max(1));
    let (mut model, mut cfg) = match c.preset {
        Preset::Tiny => (ModelConfig::tiny(vocab.len(), n_ids, n_types), TrainConfig::desk()),
        Preset::Desk => (ModelConfig::desk(vocab.len(), n_ids, n_types), TrainConfig::desk()),
        Preset::Paper => (ModelConfig::paper(vocab.len(), n_ids, n_types), TrainConfig::paper()),
    };
    model.seed = c.seed;
    if let Some(n) = c.max_seq_len {
        model.max_seq_len = n;
    }
    cfg.seed = c.seed;
    if let Some(lr) = c.lr {
        cfg.step.eta = lr;
    }
    if let Some(e) = c.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = c.batch {
        cfg.batch_size = b;
    }
    if let Some(p) = c.patience {
        cfg.patience = (p > 0).then_some(p);
    }
    Ok(Prepared {
        split,
        registry,
        vocab,
        model,
        cfg,
    })
}

fn stem(file: &str) -> &str {
    file.strip_suffix(".ckpt").unwrap_or(file)
}

fn save_trained(dir: &Path, name: &str, t: &TrainedModel) -> Result<()> {
    save_checkpoint(&t.checkpoint, &dir.join(format!("{name}.ckpt")))?;
    save_run(&t.run, &dir.join(format!("{name}.run.json")))?;
    fs::write(dir.join(format!("{name}.log.jsonl")), t.run.to_jsonl())?;
    let last = t.run.history.last();
    eprintln!(
        "{name}: {} epoch(s), best epoch {:?}, validation {} = {}{}",
        t.run.history.len(),
        t.run.best_epoch,
        t.run.selection_metric,
        t.run.best_metric.map_or("n/a".to_string(), |m| format!("{m:.4}")),
        last.and_then(|e| e.mean_alpha).map_or(String::new(), |a| format!(
            ", last mean alpha ({:.3}, {:.3})",
            a[0], a[1]
        ))
    );
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut p = prepare(&a.common)?;
    p.cfg.step.w1 = a.w1;
    p.cfg.step.w2 = a.w2;
    let dir = &a.common.out;
    let mode = match a.mode {
        Mode::Moo => TrainMode::Moo,
        Mode::WeightedSum => TrainMode::WeightedSum,
    };
    let wants = |t: Task| a.task == t || a.task == Task::All;
    if wants(Task::Detector) {
        let start = Instant::now();
        let t = train_detector(&p.split, &p.vocab, &p.registry, &p.model, &p.cfg)?;
        save_trained(dir, stem(DETECTOR_FILE), &t)?;
        eprintln!("detector trained in {:.1?}", start.elapsed());
    }
    if wants(Task::Classifier) {
        let start = Instant::now();
        let t = train_classifier(&p.split, &p.vocab, &p.registry, &p.model, &p.cfg, mode)?;
        save_trained(dir, stem(CLASSIFIER_FILE), &t)?;
        eprintln!("classifier trained in {:.1?}", start.elapsed());
    }
    if wants(Task::Regressor) {
        let start = Instant::now();
        let t = train_regressor(&p.split, &p.vocab, &p.registry, &p.model, &p.cfg)?;
        save_trained(dir, stem(REGRESSOR_FILE), &t)?;
        eprintln!("regressor trained in {:.1?}", start.elapsed());
    }
    Ok(())
}

pub fn compare(a: &CompareArgs) -> Result<()> {
    let mut p = prepare(&a.common)?;
    p.cfg.step.w1 = a.w1;
    p.cfg.step.w2 = a.w2;
    let dir = &a.common.out;
    let (table, models) = compare_moo_weighted(&p.split, &p.vocab, &p.registry, &p.model, &p.cfg)?;
    for (name, m) in ["classifier_moo", "classifier_weighted_sum"].iter().zip(&models) {
        save_trained(dir, name, m)?;
    }
    fs::write(dir.join(COMPARISON_CSV), table.to_csv())?;
    write_output(None, &table.to_text())
}

fn pick_split(split: &DatasetSplit, which: SplitName, all: Vec<VulnRecord>) -> Vec<VulnRecord> {
    match which {
        SplitName::Train => split.train.clone(),
        SplitName::Validation => split.validation.clone(),
        SplitName::Test => split.test.clone(),
        SplitName::All => all,
    }
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let dir = a.checkpoint.parent().unwrap_or(Path::new("."));
    let checkpoint = load_checkpoint(&a.checkpoint).map_err(|e| fail(format!("{}: {e}", a.checkpoint.display())))?;
    let vocab_path = a.vocab.clone().unwrap_or_else(|| dir.join(VOCAB_FILE));
    let vocab = Vocab::load(&vocab_path).map_err(|e| fail(format!("{}: {e}", vocab_path.display())))?;
    let seed = match a.seed {
        Some(s) => s,
        None => match fs::read_to_string(dir.join(SPLIT_FILE)) {
            Ok(text) => serde_json::from_str::<SplitManifest>(&text)?.seed,
            Err(_) => 42,
        },
    };
    let (records, _) = load_records(&a.data)?;
    let split = split_dataset(&records, DEFAULT_RATIOS, seed)?;
    let subset = pick_split(&split, a.split, records);
    let report = evaluate(&checkpoint, &vocab, &subset)?;
    let text = match a.format {
        Format::Text => report.to_text(),
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
    };
    write_output(a.out.as_deref(), &text)
}

const SOURCE_EXTENSIONS: [&str; 9] = ["c", "cc", "cpp", "cxx", "c++", "h", "hh", "hpp", "hxx"];

/// Files named on the command line plus C/C++ sources under named
/// directories, in sorted order.
pub fn collect_sources(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        let meta = fs::metadata(p).map_err(|e| fail(format!("{}: {e}", p.display())))?;
        if meta.is_dir() {
            let mut found: Vec<PathBuf> = Vec::new();
            for entry in walkdir::WalkDir::new(p) {
                let entry = entry?;
                let ext = entry.path().extension().and_then(|e| e.to_str()).unwrap_or("");
                if entry.file_type().is_file() && SOURCE_EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str()) {
                    found.push(entry.into_path());
                }
            }
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn load_engine(a: &EngineArgs) -> Result<Engine> {
    let repair: Box<dyn RepairProvider> = match a.repair {
        RepairKind::None => Box::new(NoRepair),
        RepairKind::Rules => Box::new(RuleRepair),
    };
    let engine = Engine::load(&a.models)
        .map_err(|e| fail(format!("cannot load models from {}: {e}", a.models.display())))?
        .with_options(EngineOptions {
            threshold: a.threshold,
            top_k: Some(a.top_k),
        })?
        .with_repair(repair);
    let missing = engine.cwe_db().missing(engine.registry());
    if !missing.is_empty() {
        eprintln!("note: no bundled description for {}", missing.join(", "));
    }
    Ok(engine)
}

pub fn scan(a: &ScanArgs) -> Result<u8> {
    let engine = load_engine(&a.engine)?;
    let files = collect_sources(&a.paths)?;
    let analysis = engine.analyze_files(&files)?;
    for t in &analysis.truncated {
        eprintln!("note: {t} exceeds the model input length and was analyzed truncated");
    }
    let report = analysis.into_report();
    let text = match a.format {
        ScanFormat::Json => report.to_json() + "\n",
        ScanFormat::Sarif => serde_json::to_string_pretty(&report.to_sarif(engine.cwe_db()))? + "\n",
        ScanFormat::Text => report.to_text(),
    };
    write_output(a.out.as_deref(), &text)?;
    Ok(if a.fail_on_findings && !report.diagnostics.is_empty() {
        EXIT_FINDINGS
    } else {
        EXIT_CLEAN
    })
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    let engine = load_engine(&a.engine)?;
    let state = vulnhunter_service::AppState::new(Some(engine));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let addr = vulnhunter_service::local_addr(a.port);
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| fail(format!("cannot bind {addr}: {e}")))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            eprintln!("shutting down");
        };
        vulnhunter_service::serve(listener, state, shutdown).await?;
        Ok(())
    })
}
