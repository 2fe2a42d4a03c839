//! The `revagent` command line: corpus statistics and splits, BM25 indices,
//! training-set export, review runs and metric evaluation.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O or schema, 3 backend, 4 unparseable
//! verdict, 5 nothing to evaluate after joining.

mod batch;
mod eval;

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use revagent::config::{AppConfig, ConfigError};
use revagent::corpus::{compute_stats, load_corpus, parse_diff_hunk, split_corpus, Corpus, IssueCategory, RawRecord, Split};
use revagent::pipeline::{PipelineError, ReviewMode};
use revagent::retrieval::{CategoryIndex, CategoryIndices, CodeTokenizerConfig, INDEX_HEADER};
use revagent::trainset::{
    build_commentator_corpora, build_critic_corpus, write_training_set, CriticCorpusMode, TrainsetError,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{read_batch, review_batch, BatchEntry, BatchSummary};
pub use eval::{join_predictions, read_predictions, Prediction};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Verdict(String),
    #[error("{0}")]
    EmptyJoin(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Verdict(_) => 4,
            CliError::EmptyJoin(_) => 5,
        }
    }

    pub fn from_pipeline(e: &PipelineError) -> Self {
        match e {
            PipelineError::Backend { .. } | PipelineError::Config(_) => CliError::Backend(e.to_string()),
            PipelineError::Verdict(_) => CliError::Verdict(e.to_string()),
            PipelineError::Prompt(_) | PipelineError::Retrieval(_) => CliError::Io(e.to_string()),
        }
    }
}

macro_rules! io_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Io(e.to_string())
            }
        }
    )*};
}

io_errors!(std::io::Error, serde_json::Error, revagent::corpus::CorpusError, revagent::retrieval::RetrievalError);

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. }
            | ConfigError::Parse(_)
            | ConfigError::Serialize(_)
            | ConfigError::Corpus(_)
            | ConfigError::Retrieval(_) => CliError::Io(e.to_string()),
            _ => CliError::Backend(e.to_string()),
        }
    }
}

impl From<TrainsetError> for CliError {
    fn from(e: TrainsetError) -> Self {
        match e {
            TrainsetError::Pipeline(p) => CliError::from_pipeline(&p),
            other => CliError::Io(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "revagent", version, about = "Issue-oriented multi-agent review comment generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Standard,
    Sfa,
    Msc,
}

impl From<ModeArg> for ReviewMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Standard => ReviewMode::Standard,
            ModeArg::Sfa => ReviewMode::Sfa,
            ModeArg::Msc => ReviewMode::Msc,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TrainMode {
    /// Other-category candidates retrieved with BM25.
    Ccr,
    /// Other-category candidates generated by the configured commentators.
    Generated,
}

#[derive(Debug, clap::Args)]
pub struct RetrievalArgs {
    #[arg(long, default_value_t = revagent::retrieval::DEFAULT_K1)]
    pub k1: f64,
    #[arg(long, default_value_t = revagent::retrieval::DEFAULT_B)]
    pub b: f64,
    /// Keep identifiers whole instead of splitting camelCase and digits.
    #[arg(long)]
    pub no_split_identifiers: bool,
    /// Keep the original case of tokens.
    #[arg(long)]
    pub keep_case: bool,
}

impl RetrievalArgs {
    fn tokenizer(&self) -> CodeTokenizerConfig {
        CodeTokenizerConfig {
            lowercase: !self.keep_case,
            split_identifiers: !self.no_split_identifiers,
            ..CodeTokenizerConfig::default()
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-category counts, mean diff lines and mean comment tokens.
    Stats {
        corpus: PathBuf,
        /// Also write the statistics as JSON to this file.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Stratified train/test split written as train.jsonl and test.jsonl.
    Split {
        corpus: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0.75)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build and persist one BM25 index per category plus a manifest.
    Index {
        corpus: PathBuf,
        outdir: PathBuf,
        #[command(flatten)]
        retrieval: RetrievalArgs,
    },
    /// Query a persisted category index with a diff file.
    Query {
        #[arg(long)]
        index_dir: PathBuf,
        #[arg(long)]
        category: IssueCategory,
        #[arg(long)]
        diff: PathBuf,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
    },
    /// Export commentator and critic instruction-tuning corpora. Uses the
    /// train-tagged records when the corpus carries split tags.
    BuildTrain {
        corpus: PathBuf,
        outdir: PathBuf,
        #[arg(long, value_enum, default_value = "ccr")]
        mode: TrainMode,
        /// Run configuration; required for generated mode.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        retrieval: RetrievalArgs,
    },
    /// Review one diff or a JSONL batch and print one JSON object per diff.
    Review {
        #[arg(long, required_unless_present = "batch", conflicts_with = "batch")]
        diff: Option<PathBuf>,
        #[arg(long)]
        batch: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Write outputs here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent batch entries (default from config, else 4).
        #[arg(long)]
        workers: Option<usize>,
        /// Select the Refactoring candidate when the critic stays unparseable.
        #[arg(long)]
        fallback: bool,
    },
    /// Score predictions against reference comments.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Embedding service base URL, or "mock" for the offline provider.
        #[arg(long, default_value = "mock")]
        embedder: String,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        /// Also write the report as JSON to this file.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

/// Parse `args` (program name first) and run. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 { write!(out, "{rendered}") } else { write!(err, "{rendered}") };
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Stats { corpus, json } => cmd_stats(&corpus, json.as_deref(), out, err),
        Command::Split { corpus, out_dir, train_fraction, seed } => {
            cmd_split(&corpus, &out_dir, train_fraction, seed, out)
        }
        Command::Index { corpus, outdir, retrieval } => cmd_index(&corpus, &outdir, &retrieval, out),
        Command::Query { index_dir, category, diff, k } => cmd_query(&index_dir, category, &diff, k, out),
        Command::BuildTrain { corpus, outdir, mode, config, retrieval } => {
            cmd_build_train(&corpus, &outdir, mode, config.as_deref(), &retrieval, out)
        }
        Command::Review { diff, batch, config, mode, out: out_path, workers, fallback } => {
            let entries = match (diff, batch) {
                (Some(path), _) => vec![read_single_diff(&path)?],
                (None, Some(path)) => read_batch(&path)?,
                (None, None) => unreachable!("clap requires one of --diff/--batch"),
            };
            cmd_review(&entries, &config, mode.map(Into::into), out_path.as_deref(), workers, fallback, out, err)
        }
        Command::Eval { pred, reference, embedder, batch_size, json } => {
            eval::cmd_eval(&pred, &reference, &embedder, batch_size, json.as_deref(), out, err)
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<Corpus, CliError> {
    load_corpus(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn cmd_stats(corpus: &Path, json: Option<&Path>, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let corpus = load(corpus)?;
    if corpus.dropped_others + corpus.dropped_malformed > 0 {
        writeln!(err, "dropped {} 'others' and {} malformed record(s)", corpus.dropped_others, corpus.dropped_malformed)?;
    }
    let stats = compute_stats(&corpus);
    write!(out, "{}", stats.render_table())?;
    let text = serde_json::to_string_pretty(&stats)?;
    writeln!(out, "{text}")?;
    if let Some(path) = json {
        fs::write(path, text + "\n")?;
    }
    Ok(())
}

fn write_jsonl(path: &Path, corpus: &Corpus) -> Result<(), CliError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in &corpus.records {
        serde_json::to_writer(&mut w, &RawRecord::from(r))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_split(corpus: &Path, out_dir: &Path, fraction: f64, seed: u64, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = load(corpus)?;
    let (train, test) = split_corpus(&corpus, fraction, seed)?;
    fs::create_dir_all(out_dir)?;
    write_jsonl(&out_dir.join("train.jsonl"), &train)?;
    write_jsonl(&out_dir.join("test.jsonl"), &test)?;
    writeln!(out, "train {} / test {} (seed {seed})", train.len(), test.len())?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format: String,
    pub k1: f64,
    pub b: f64,
    pub tokenizer: CodeTokenizerConfig,
    pub categories: std::collections::BTreeMap<IssueCategory, ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub documents: usize,
}

pub fn index_file_name(category: IssueCategory) -> String {
    format!("{}.bm25", category.name())
}

fn cmd_index(corpus: &Path, outdir: &Path, args: &RetrievalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = load(corpus)?;
    let indices = CategoryIndices::build(&corpus, args.tokenizer(), args.k1, args.b)?;
    fs::create_dir_all(outdir)?;
    let mut manifest = IndexManifest {
        format: INDEX_HEADER.to_string(),
        k1: args.k1,
        b: args.b,
        tokenizer: args.tokenizer(),
        categories: Default::default(),
    };
    for category in IssueCategory::ALL {
        let Ok(index) = indices.get(category) else { continue };
        let file = index_file_name(category);
        index.save(outdir.join(&file))?;
        writeln!(out, "{category}: {} documents -> {file}", index.index.len())?;
        manifest.categories.insert(category, ManifestEntry { file, documents: index.index.len() });
    }
    fs::write(outdir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn cmd_query(index_dir: &Path, category: IssueCategory, diff: &Path, k: usize, out: &mut dyn Write) -> Result<(), CliError> {
    let path = index_dir.join(index_file_name(category));
    let index = CategoryIndex::load(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let hunk = parse_diff_hunk(&read_text(diff)?)?;
    for hit in index.index.query(&hunk.raw_text, k) {
        let comment = index.comment(&hit.doc_id).unwrap_or_default();
        let line = serde_json::json!({"rank": hit.rank, "doc_id": hit.doc_id, "score": hit.score, "comment": comment});
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn cmd_build_train(
    corpus: &Path,
    outdir: &Path,
    mode: TrainMode,
    config: Option<&Path>,
    args: &RetrievalArgs,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mode = match (mode, config) {
        (TrainMode::Ccr, _) => CriticCorpusMode::Ccr { tokenizer: args.tokenizer(), k1: args.k1, b: args.b },
        (TrainMode::Generated, Some(path)) => CriticCorpusMode::Generated(AppConfig::load(path)?.build_pipeline(None)?),
        (TrainMode::Generated, None) => {
            return Err(CliError::Backend(
                "generated mode calls the commentator agents; pass --config with a [backends] section and five commentator agents".into(),
            ))
        }
    };
    let corpus = load(corpus)?;
    let train = if corpus.records.iter().any(|r| r.split.is_some()) { corpus.with_split(Split::Train) } else { corpus };
    let commentators = build_commentator_corpora(&train);
    let (critic, report) = build_critic_corpus(&train, &mode)?;
    let written = write_training_set(outdir, &commentators, &critic, &report)?;
    writeln!(out, "{} critic instances from {} training records", report.instances, train.len())?;
    for (category, counts) in &report.histogram {
        writeln!(
            out,
            "  {:<14} gold {:>5}  retrieved {:>5}  generated {:>5}  sentinel {:>5}  fallback {:>5}",
            category.name(),
            counts.ground_truth,
            counts.retrieved,
            counts.generated,
            counts.sentinel,
            counts.fallback
        )?;
    }
    writeln!(out, "wrote {} files to {}", written.len(), outdir.display())?;
    Ok(())
}

fn read_single_diff(path: &Path) -> Result<BatchEntry, CliError> {
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let diff = parse_diff_hunk(&read_text(path)?)?.with_id(id.clone());
    Ok(BatchEntry { id, diff })
}

#[allow(clippy::too_many_arguments)]
fn cmd_review(
    entries: &[BatchEntry],
    config: &Path,
    mode: Option<ReviewMode>,
    out_path: Option<&Path>,
    workers: Option<usize>,
    fallback: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let app = AppConfig::load(config)?;
    let mut pipeline = app.build_pipeline(mode)?;
    pipeline.majority_fallback |= fallback;
    let workers = workers.unwrap_or(app.pipeline.workers);
    let summary = match out_path {
        Some(path) => {
            let mut file = BufWriter::new(fs::File::create(path)?);
            review_batch(entries, &pipeline, workers, &mut file)?
        }
        None => review_batch(entries, &pipeline, workers, out)?,
    };
    writeln!(err, "{}", summary.describe())?;
    match summary.first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
