//! Command-line front end: `repair`, `prepare`, `split`, `train`,
//! `generate`, `eval` and `pipeline`, sharing one resolved configuration.
//!
//! Settings come from built-in defaults, then an optional JSON file given
//! with `--config`, then command-line flags. The resolved configuration is
//! echoed to stderr as JSON at the start of every run. Exit status is 0 on
//! success, 1 on a usage error and 2 on a data or contract error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{self, corpus_stats, load_examples, persist_examples, PreparedExample};
use crate::decode::{generate_all, GenerateOptions, DEFAULT_BEAM, DEFAULT_MAX_LEN};
use crate::metrics::{self, MetricReport, DEFAULT_BETA};
use crate::models::{init_params, Arch, AttentionKind, FeatureDims, ModelConfig};
use crate::repair::{repair_corpus, RepairConfig, SearchScope, DEFAULT_THRESHOLD};
use crate::textprep::vocab::{DEFAULT_MAX_SIZE, DEFAULT_MIN_FREQ};
use crate::textprep::{load_word_vectors, prepare_with_report, read_tag_file, FilterMode, PrepareOptions, Vocabularies};
use crate::train::{
    load_checkpoint, save_checkpoint, split_train_val, train_with_validation, EpochRecord, OptimizerKind, TrainConfig,
};

pub const DEFAULT_SEED: u64 = 42;

/// Every setting any subcommand reads, after merging file and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,

    pub repair_threshold: f64,
    pub search_scope: SearchScope,

    pub uncased: bool,
    pub pos_tags: Option<PathBuf>,
    pub ne_tags: Option<PathBuf>,
    pub require_tags: bool,
    pub drop_impossible: bool,
    pub filter_percentile: Option<f64>,

    pub split_ratio: f64,
    pub split_seed: Option<u64>,

    pub arch: Arch,
    pub attention: AttentionKind,
    pub copy: bool,
    pub coverage: bool,
    pub word_dim: usize,
    pub hidden: usize,
    pub layers: Option<usize>,
    pub heads: usize,
    pub dropout: f64,
    pub feature_dims: FeatureDims,
    pub embeddings: Option<PathBuf>,
    pub vocab_size: usize,
    pub min_freq: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub clip_norm: f64,
    /// 0 disables early stopping.
    pub patience: usize,
    pub val_fraction: f64,
    pub coverage_weight: f64,

    pub beam: usize,
    pub max_len: usize,
    pub length_penalty: f64,
    pub replace_unk: bool,

    pub beta: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        Self {
            seed: DEFAULT_SEED,
            threads: None,
            repair_threshold: DEFAULT_THRESHOLD,
            search_scope: SearchScope::default(),
            uncased: false,
            pos_tags: None,
            ne_tags: None,
            require_tags: false,
            drop_impossible: false,
            filter_percentile: None,
            split_ratio: 0.9,
            split_seed: None,
            arch: model.arch,
            attention: model.attention,
            copy: false,
            coverage: false,
            word_dim: model.word_dim,
            hidden: model.hidden,
            layers: None,
            heads: model.heads,
            dropout: model.dropout,
            feature_dims: model.feature_dims,
            embeddings: None,
            vocab_size: DEFAULT_MAX_SIZE,
            min_freq: DEFAULT_MIN_FREQ,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.lr,
            optimizer: train.optimizer,
            clip_norm: train.clip_norm,
            patience: train.patience.unwrap_or(0),
            val_fraction: train.val_fraction,
            coverage_weight: model.coverage_weight,
            beam: DEFAULT_BEAM,
            max_len: DEFAULT_MAX_LEN,
            length_penalty: 0.0,
            replace_unk: true,
            beta: DEFAULT_BETA,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = ModelConfig::new(self.arch);
        m.attention = self.attention;
        m.use_copy = self.copy;
        m.use_coverage = self.coverage;
        m.uncased = self.uncased;
        m.word_dim = self.word_dim;
        m.hidden = self.hidden;
        if let Some(l) = self.layers {
            m.layers = l;
        }
        m.heads = self.heads;
        m.dropout = self.dropout;
        m.feature_dims = self.feature_dims;
        m.coverage_weight = self.coverage_weight;
        m
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            lr: self.lr,
            clip_norm: self.clip_norm,
            seed: self.seed,
            patience: (self.patience > 0).then_some(self.patience),
            val_fraction: self.val_fraction,
        }
    }

    pub fn repair_config(&self) -> Result<RepairConfig, CliError> {
        RepairConfig::new(self.repair_threshold, self.search_scope).map_err(CliError::Usage)
    }

    pub fn generate_options(&self) -> GenerateOptions {
        GenerateOptions {
            beam: self.beam,
            max_len: self.max_len,
            length_penalty: self.length_penalty,
            replace_unk: self.replace_unk,
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.seed)
    }

    fn prepare_options(&self) -> Result<PrepareOptions, CliError> {
        let tags = |p: &Option<PathBuf>| p.as_deref().map(read_tag_file).transpose();
        Ok(PrepareOptions {
            uncased: self.uncased,
            pos_tags: tags(&self.pos_tags).map_err(data)?,
            ne_tags: tags(&self.ne_tags).map_err(data)?,
            require_tags: self.require_tags,
            drop_impossible: self.drop_impossible,
            filter: match self.filter_percentile {
                Some(fraction) => FilterMode::Percentile { fraction },
                None => FilterMode::FixedCaps,
            },
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "qgen", version, about = "Question-generation toolkit: repair, prepare, train, generate, evaluate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Relocate translated answers in their contexts by fuzzy matching.
    Repair(RepairCmd),
    /// Turn a (repaired) SQuAD file into feature-annotated JSONL examples.
    Prepare(PrepareCmd),
    /// Seeded train/validation split of a JSONL file.
    Split(SplitCmd),
    /// Train a model and write a checkpoint.
    Train(TrainCmd),
    /// Generate one question per input example.
    Generate(GenerateCmd),
    /// Score hypotheses against references with BLEU-1..4 and ROUGE-L.
    Eval(EvalCmd),
    /// Repair, prepare, split, train, generate and evaluate in one run.
    Pipeline(PipelineCmd),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON file with settings; flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice (default 42).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives the single-threaded baseline.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RepairArgs {
    /// Minimum similarity ratio for a fuzzy match (default 0.8).
    #[arg(long)]
    pub repair_threshold: Option<f64>,
    /// `near-original-first` or `whole-context`.
    #[arg(long, value_parser = parse_scope)]
    pub search_scope: Option<SearchScope>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Lowercase source and target text (the case feature is kept).
    #[arg(long)]
    pub uncased: bool,
    /// POS tag file: one blank-line separated block per paragraph.
    #[arg(long)]
    pub pos_tags: Option<PathBuf>,
    /// NE tag file in the same format.
    #[arg(long)]
    pub ne_tags: Option<PathBuf>,
    /// Fail instead of falling back to uniform tags when a tag file is missing.
    #[arg(long)]
    pub require_tags: bool,
    /// Drop pairs marked is_impossible.
    #[arg(long)]
    pub drop_impossible: bool,
    /// Drop this fraction of longest questions and answers before the caps.
    #[arg(long)]
    pub filter_percentile: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Training fraction of the train/validation split (default 0.9).
    #[arg(long)]
    pub split_ratio: Option<f64>,
    /// Seed of the split shuffle (defaults to --seed).
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// bigru, bilstm or transformer.
    #[arg(long)]
    pub arch: Option<Arch>,
    /// bahdanau or luong (recurrent models).
    #[arg(long)]
    pub attention: Option<AttentionKind>,
    /// Enable the copy mechanism.
    #[arg(long)]
    pub copy: bool,
    /// Enable the coverage mechanism (recurrent models).
    #[arg(long)]
    pub coverage: bool,
    #[arg(long)]
    pub word_dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Word vectors in text format ("count dim" header, then "token v1 .. vd").
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Maximum word vocabulary size, specials included.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub min_freq: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// adam or sgd.
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    /// Global gradient-norm limit (0 disables clipping).
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Epochs without validation improvement before stopping (0 disables).
    #[arg(long)]
    pub patience: Option<usize>,
    /// Fraction held out for validation when no --val file is given.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Weight of the coverage loss.
    #[arg(long)]
    pub coverage_weight: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub length_penalty: Option<f64>,
    /// Keep unknown-word outputs instead of replacing them with the most-attended source token.
    #[arg(long)]
    pub no_replace_unk: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Recall weight of the ROUGE-L F-measure (default 1.2).
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RepairCmd {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub repair: RepairArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PrepareCmd {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub prepare: PrepareArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SplitCmd {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub val_out: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    /// Training examples (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    /// Validation examples; without it --val-fraction of --data is held out.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Optional JSON file receiving the per-epoch history.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct GenerateCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Prepared examples (JSONL).
    #[arg(long)]
    pub input: PathBuf,
    /// One generated question per line, in input order.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Also write the JSON report here.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PipelineCmd {
    /// SQuAD-format JSON (translated).
    #[arg(long)]
    pub input: PathBuf,
    /// Directory receiving every artifact.
    #[arg(long, default_value = "pipeline-out")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub repair: RepairArgs,
    #[command(flatten)]
    pub prepare: PrepareArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[command(flatten)]
    pub common: Common,
}

fn parse_scope(s: &str) -> Result<SearchScope, String> {
    match s {
        "near-original-first" => Ok(SearchScope::NearOriginalFirst),
        "whole-context" => Ok(SearchScope::WholeContext),
        other => Err(format!("unknown search scope {other:?} (near-original-first, whole-context)")),
    }
}

fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
    if let Some(v) = v {
        *slot = v.clone();
    }
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_json_file(p)?,
            None => RunConfig::default(),
        };
        set(&mut c.seed, &self.seed);
        if self.threads.is_some() {
            c.threads = self.threads;
        }
        Ok(c)
    }
}

impl RepairArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.repair_threshold, &self.repair_threshold);
        set(&mut c.search_scope, &self.search_scope);
    }
}

impl PrepareArgs {
    fn apply(&self, c: &mut RunConfig) {
        c.uncased |= self.uncased;
        c.require_tags |= self.require_tags;
        c.drop_impossible |= self.drop_impossible;
        if self.pos_tags.is_some() {
            c.pos_tags = self.pos_tags.clone();
        }
        if self.ne_tags.is_some() {
            c.ne_tags = self.ne_tags.clone();
        }
        if self.filter_percentile.is_some() {
            c.filter_percentile = self.filter_percentile;
        }
    }
}

impl SplitArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.split_ratio, &self.split_ratio);
        if self.split_seed.is_some() {
            c.split_seed = self.split_seed;
        }
    }
}

impl ModelArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.arch, &self.arch);
        set(&mut c.attention, &self.attention);
        c.copy |= self.copy;
        c.coverage |= self.coverage;
        set(&mut c.word_dim, &self.word_dim);
        set(&mut c.hidden, &self.hidden);
        if self.layers.is_some() {
            c.layers = self.layers;
        }
        set(&mut c.heads, &self.heads);
        set(&mut c.dropout, &self.dropout);
        if self.embeddings.is_some() {
            c.embeddings = self.embeddings.clone();
        }
        set(&mut c.vocab_size, &self.vocab_size);
        set(&mut c.min_freq, &self.min_freq);
    }
}

impl TrainArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.epochs, &self.epochs);
        set(&mut c.batch_size, &self.batch_size);
        set(&mut c.lr, &self.lr);
        set(&mut c.optimizer, &self.optimizer);
        set(&mut c.clip_norm, &self.clip_norm);
        set(&mut c.patience, &self.patience);
        set(&mut c.val_fraction, &self.val_fraction);
        set(&mut c.coverage_weight, &self.coverage_weight);
    }
}

impl DecodeArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.beam, &self.beam);
        set(&mut c.max_len, &self.max_len);
        set(&mut c.length_penalty, &self.length_penalty);
        if self.no_replace_unk {
            c.replace_unk = false;
        }
    }
}

impl EvalArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.beta, &self.beta);
    }
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Repair(c) => &c.common,
            Command::Prepare(c) => &c.common,
            Command::Split(c) => &c.common,
            Command::Train(c) => &c.common,
            Command::Generate(c) => &c.common,
            Command::Eval(c) => &c.common,
            Command::Pipeline(c) => &c.common,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Repair(_) => "repair",
            Command::Prepare(_) => "prepare",
            Command::Split(_) => "split",
            Command::Train(_) => "train",
            Command::Generate(_) => "generate",
            Command::Eval(_) => "eval",
            Command::Pipeline(_) => "pipeline",
        }
    }

    /// Defaults, then `--config`, then flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = self.common().resolve()?;
        match self {
            Command::Repair(x) => x.repair.apply(&mut c),
            Command::Prepare(x) => x.prepare.apply(&mut c),
            Command::Split(x) => x.split.apply(&mut c),
            Command::Train(x) => {
                x.model.apply(&mut c);
                x.train.apply(&mut c);
            }
            Command::Generate(x) => x.decode.apply(&mut c),
            Command::Eval(x) => x.eval.apply(&mut c),
            Command::Pipeline(x) => {
                x.repair.apply(&mut c);
                x.prepare.apply(&mut c);
                x.split.apply(&mut c);
                x.model.apply(&mut c);
                x.train.apply(&mut c);
                x.decode.apply(&mut c);
                x.eval.apply(&mut c);
            }
        }
        Ok(c)
    }
}

/// Parses `argv` (program name first) and runs the subcommand, writing data
/// to `out` and logs to `err`. Returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
        }
    };
    match execute(&cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "qgen {}: error: {e}", cli.command.name());
            e.exit_code()
        }
    }
}

/// Entry point for the binary.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn execute(cmd: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let cfg = cmd.resolve()?;
    let echo = serde_json::to_string(&cfg).expect("config serializes");
    writeln!(err, "qgen {}: config {echo}", cmd.name()).map_err(data)?;
    match cfg.threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(data)?;
            run_in_pool(&pool, cmd, &cfg, out, err)
        }
        None => run_command(cmd, &cfg, out, err),
    }
}

/// Sink that forwards writes to the calling thread.
struct ChannelWriter {
    tx: std::sync::mpsc::Sender<(bool, Vec<u8>)>,
    is_err: bool,
}

impl Write for ChannelWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.tx
            .send((self.is_err, buf.to_vec()))
            .map_err(|_| std::io::Error::new(std::io::ErrorKind::BrokenPipe, "output closed"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// Runs the command on a dedicated pool while streaming its output back
/// to `out` and `err` from this thread.
fn run_in_pool(
    pool: &rayon::ThreadPool,
    cmd: &Command,
    cfg: &RunConfig,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::scope(|s| {
        let worker = s.spawn(move || {
            let mut o = ChannelWriter { tx: tx.clone(), is_err: false };
            let mut e = ChannelWriter { tx, is_err: true };
            pool.install(|| run_command(cmd, cfg, &mut o, &mut e))
        });
        for (is_err, bytes) in rx {
            let sink: &mut dyn Write = if is_err { &mut *err } else { &mut *out };
            let _ = sink.write_all(&bytes);
        }
        worker.join().expect("command thread panicked")
    })
}

fn run_command(cmd: &Command, cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Repair(x) => {
            let report = repair_file(&x.input, &x.output, cfg)?;
            writeln!(out, "{}", serde_json::to_string(&report).expect("report")).map_err(data)
        }
        Command::Prepare(x) => {
            let (examples, report) = prepare_file(&x.input, cfg)?;
            persist_examples(&examples, &x.output).map_err(data)?;
            writeln!(err, "qgen prepare: {}", serde_json::to_string(&report).expect("report")).map_err(data)?;
            writeln!(out, "{}", serde_json::to_string(&corpus_stats(&examples)).expect("stats")).map_err(data)
        }
        Command::Split(x) => {
            let examples = load_examples(&x.input).map_err(data)?;
            let (tr, val) = split_train_val(&examples, cfg.split_ratio, cfg.split_seed()).map_err(|e| CliError::Usage(e.to_string()))?;
            persist_examples(&tr, &x.train_out).map_err(data)?;
            persist_examples(&val, &x.val_out).map_err(data)?;
            writeln!(out, "{{\"train\":{},\"val\":{}}}", tr.len(), val.len()).map_err(data)
        }
        Command::Train(x) => {
            let examples = load_examples(&x.data).map_err(data)?;
            let (tr, val) = match &x.val {
                Some(p) => (examples, load_examples(p).map_err(data)?),
                None => split_train_val(&examples, 1.0 - cfg.val_fraction, cfg.seed).map_err(|e| CliError::Usage(e.to_string()))?,
            };
            let history = train_examples(&tr, &val, cfg, &x.output, err)?;
            if let Some(h) = &x.history {
                write_json(h, &history)?;
            }
            writeln!(out, "{}", serde_json::to_string(&history).expect("history")).map_err(data)
        }
        Command::Generate(x) => {
            let examples = load_examples(&x.input).map_err(data)?;
            let lines = generate_file(&x.checkpoint, &examples, cfg)?;
            write_lines(&x.output, &lines)?;
            writeln!(err, "qgen generate: wrote {} questions to {}", lines.len(), x.output.display()).map_err(data)
        }
        Command::Eval(x) => {
            let report = metrics::evaluate_corpus(&x.hyp, &x.reference, cfg.beta).map_err(data)?;
            print_report(&report, out)?;
            if let Some(p) = &x.json {
                write_json(p, &report)?;
            }
            Ok(())
        }
        Command::Pipeline(x) => {
            let report = run_pipeline(&x.input, &x.out_dir, cfg, err)?;
            print_report(&report, out)
        }
    }
}

fn print_report(report: &MetricReport, out: &mut dyn Write) -> Result<(), CliError> {
    write!(out, "{}", report.table()).map_err(data)?;
    writeln!(out, "{}", serde_json::to_string(report).expect("report")).map_err(data)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_lines(path: &Path, lines: &[String]) -> Result<(), CliError> {
    let mut text = String::new();
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn repair_file(input: &Path, output: &Path, cfg: &RunConfig) -> Result<crate::repair::RepairReport, CliError> {
    let mut file = corpus::load_squad_file(input).map_err(data)?;
    let (articles, report) = repair_corpus(&file.data, &cfg.repair_config()?);
    file.data = articles;
    corpus::save_squad(&file, output).map_err(data)?;
    Ok(report)
}

pub fn prepare_file(
    input: &Path,
    cfg: &RunConfig,
) -> Result<(Vec<PreparedExample>, crate::textprep::PrepareReport), CliError> {
    let articles = corpus::load_squad(input).map_err(data)?;
    prepare_with_report(&articles, &cfg.prepare_options()?).map_err(data)
}

/// Builds vocabularies from `train`, trains, and writes the checkpoint.
pub fn train_examples(
    train: &[PreparedExample],
    val: &[PreparedExample],
    cfg: &RunConfig,
    output: &Path,
    err: &mut dyn Write,
) -> Result<Vec<EpochRecord>, CliError> {
    let vocabs = Vocabularies::build(train, cfg.vocab_size, cfg.min_freq);
    let model_cfg = cfg.model_config();
    let embeddings = match &cfg.embeddings {
        Some(p) => Some(load_word_vectors(p, &vocabs.words, model_cfg.word_dim, cfg.seed).map_err(data)?),
        None => None,
    };
    let model = init_params(&model_cfg, &vocabs, embeddings.as_ref(), cfg.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let tc = cfg.train_config();
    tc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    writeln!(
        err,
        "qgen train: {} {} on {} examples ({} validation), vocabulary {}",
        model_cfg.arch,
        model_cfg.variant_name(),
        train.len(),
        val.len(),
        vocabs.words.len()
    )
    .map_err(data)?;
    let outcome = train_with_validation(model, train, val, &tc, |r| {
        let _ = writeln!(
            err,
            "qgen train: epoch {} train_loss {:.6} val_loss {}",
            r.epoch,
            r.train_loss,
            r.val_loss.map_or("-".to_string(), |v| format!("{v:.6}"))
        );
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(crate::train::TrainError::Diverged { epoch, batch, last_good }) => {
            save_checkpoint(&last_good, output).map_err(data)?;
            return Err(CliError::Data(format!(
                "training diverged in epoch {epoch}, batch {batch}; last good parameters written to {}",
                output.display()
            )));
        }
        Err(e) => return Err(data(e)),
    };
    save_checkpoint(&outcome.checkpoint, output).map_err(data)?;
    Ok(outcome.history)
}

pub fn generate_file(checkpoint: &Path, examples: &[PreparedExample], cfg: &RunConfig) -> Result<Vec<String>, CliError> {
    let model = load_checkpoint(checkpoint).map_err(data)?.to_model().map_err(data)?;
    let generated = generate_all(&model, examples, &cfg.generate_options()).map_err(data)?;
    Ok(generated.into_iter().map(|g| g.words.join(" ")).collect())
}

/// Artifact file names written by `pipeline`.
pub const PIPELINE_ARTIFACTS: [&str; 10] = [
    "config.json",
    "repaired.json",
    "examples.jsonl",
    "train.jsonl",
    "val.jsonl",
    "model.ckpt",
    "history.json",
    "generated.txt",
    "references.txt",
    "report.json",
];

pub fn run_pipeline(input: &Path, out_dir: &Path, cfg: &RunConfig, err: &mut dyn Write) -> Result<MetricReport, CliError> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::Data(format!("{}: {e}", out_dir.display())))?;
    let path = |name: &str| out_dir.join(name);
    write_json(&path("config.json"), cfg)?;

    let repair = repair_file(input, &path("repaired.json"), cfg)?;
    writeln!(err, "qgen pipeline: repair {}", serde_json::to_string(&repair).expect("report")).map_err(data)?;

    let (examples, prep) = prepare_file(&path("repaired.json"), cfg)?;
    persist_examples(&examples, &path("examples.jsonl")).map_err(data)?;
    writeln!(err, "qgen pipeline: prepare {}", serde_json::to_string(&prep).expect("report")).map_err(data)?;

    let (tr, val) = split_train_val(&examples, cfg.split_ratio, cfg.split_seed()).map_err(|e| CliError::Usage(e.to_string()))?;
    if tr.is_empty() || val.is_empty() {
        return Err(CliError::Data(format!(
            "split of {} examples leaves {} for training and {} for validation",
            examples.len(),
            tr.len(),
            val.len()
        )));
    }
    persist_examples(&tr, &path("train.jsonl")).map_err(data)?;
    persist_examples(&val, &path("val.jsonl")).map_err(data)?;

    let history = train_examples(&tr, &val, cfg, &path("model.ckpt"), err)?;
    write_json(&path("history.json"), &history)?;

    let hyps = generate_file(&path("model.ckpt"), &val, cfg)?;
    write_lines(&path("generated.txt"), &hyps)?;
    let refs: Vec<String> = val.iter().map(|e| e.tgt.join(" ")).collect();
    write_lines(&path("references.txt"), &refs)?;

    let report = metrics::score_lines(&hyps, &refs, cfg.beta).map_err(data)?;
    write_json(&path("report.json"), &report)?;
    Ok(report)
}
