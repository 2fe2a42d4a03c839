//! Instruction-tuning corpora for the commentator and critic agents.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::parse_commentator_response;
use crate::corpus::{Corpus, IssueCategory, ReviewRecord};
use crate::pipeline::{CandidateComment, CandidateSource, PipelineConfig, PipelineError};
use crate::prompts::{self, PromptError};
use crate::retrieval::{ccr_filtered, CategoryIndices, CodeTokenizerConfig, RetrievalError};

#[derive(Debug, Error)]
pub enum TrainsetError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("bad training instance on line {line}: {message}")]
    BadInstance { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

/// Partition `train` by category; each record becomes an instance with the
/// category's commentator instruction, the diff query as input, and the
/// ground-truth comment as output. Every category key is present.
pub fn build_commentator_corpora(train: &Corpus) -> BTreeMap<IssueCategory, Vec<TrainingInstance>> {
    let mut corpora: BTreeMap<IssueCategory, Vec<TrainingInstance>> =
        IssueCategory::ALL.iter().map(|&c| (c, Vec::new())).collect();
    for record in &train.records {
        let instruction = prompts::commentator_head(record.category).expect("corpus never holds Others");
        corpora.entry(record.category).or_default().push(TrainingInstance {
            instruction,
            input: prompts::commentator_query(&record.diff),
            output: record.comment.clone(),
        });
    }
    for (category, instances) in &corpora {
        if instances.is_empty() {
            log::warn!("training split has no {category} records");
        }
    }
    corpora
}

/// Where the four non-gold candidates of a critic instance come from.
pub enum CriticCorpusMode {
    /// BM25 retrieval over the other categories' training diffs.
    Ccr { tokenizer: CodeTokenizerConfig, k1: f64, b: f64 },
    /// Ask the other four commentators (the no-retrieval ablation).
    Generated(PipelineConfig),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotCounts {
    pub ground_truth: usize,
    pub retrieved: usize,
    pub generated: usize,
    pub sentinel: usize,
    pub fallback: usize,
}

impl SlotCounts {
    pub fn total(&self) -> usize {
        self.ground_truth + self.retrieved + self.generated + self.sentinel + self.fallback
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CriticCorpusReport {
    pub instances: usize,
    pub histogram: BTreeMap<IssueCategory, SlotCounts>,
    pub ccr_fallbacks: usize,
}

impl CriticCorpusReport {
    pub fn slot_total(&self) -> usize {
        self.histogram.values().map(SlotCounts::total).sum()
    }
}

/// One critic training example before rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticExample {
    pub record_id: String,
    pub candidates: Vec<CandidateComment>,
    /// Doc id each retrieved slot came from, in category order.
    pub retrieved_from: BTreeMap<IssueCategory, String>,
}

fn ccr_slot(
    record: &ReviewRecord,
    category: IssueCategory,
    indices: &CategoryIndices,
    report: &mut CriticCorpusReport,
    retrieved_from: &mut BTreeMap<IssueCategory, String>,
) -> Result<CandidateComment, TrainsetError> {
    let counts = report.histogram.entry(category).or_default();
    match ccr_filtered(&record.diff, category, indices, |id| id != record.id()) {
        Ok((doc_id, candidate)) => {
            counts.retrieved += 1;
            retrieved_from.insert(category, doc_id);
            Ok(candidate)
        }
        Err(RetrievalError::NoHit(_)) => {
            counts.fallback += 1;
            report.ccr_fallbacks += 1;
            let idx = indices.get(category)?;
            let (doc_id, text) = idx
                .longest_comment()
                .ok_or(RetrievalError::EmptyCategoryIndex(category))?;
            retrieved_from.insert(category, doc_id.to_string());
            Ok(CandidateComment::new(category, text, CandidateSource::Retrieved))
        }
        Err(RetrievalError::EmptyCategoryIndex(_)) => {
            counts.fallback += 1;
            report.ccr_fallbacks += 1;
            Ok(CandidateComment::sentinel(category))
        }
        Err(e) => Err(e.into()),
    }
}

fn generated_slot(
    record: &ReviewRecord,
    category: IssueCategory,
    cfg: &PipelineConfig,
    report: &mut CriticCorpusReport,
) -> Result<CandidateComment, TrainsetError> {
    let agent = cfg
        .commentators
        .get(category.index().expect("reviewable category"))
        .ok_or_else(|| PipelineError::Config("need one commentator per category".into()))?;
    let prompt = prompts::commentator_prompt(category, &record.diff)?;
    let request = crate::backend::GenerationRequest {
        messages: prompt.role_messages,
        temperature: cfg.temperature,
        max_tokens: cfg.max_tokens,
        model_name: agent.model_name.clone(),
    };
    let result = agent.backend.complete(&request).map_err(|source| PipelineError::Backend {
        agent: format!("commentator:{}", category.name()),
        source,
    })?;
    let candidate = parse_commentator_response(&result.text, category);
    let counts = report.histogram.entry(category).or_default();
    if candidate.declined {
        counts.sentinel += 1;
    } else {
        counts.generated += 1;
    }
    Ok(candidate)
}

/// Assemble the five candidate slots for every training record: the gold
/// comment in its own category and one candidate per other category.
pub fn build_critic_examples(
    train: &Corpus,
    mode: &CriticCorpusMode,
) -> Result<(Vec<CriticExample>, CriticCorpusReport), TrainsetError> {
    let indices = match mode {
        CriticCorpusMode::Ccr { tokenizer, k1, b } => Some(CategoryIndices::build(train, *tokenizer, *k1, *b)?),
        CriticCorpusMode::Generated(_) => None,
    };
    let mut report = CriticCorpusReport {
        histogram: IssueCategory::ALL.iter().map(|&c| (c, SlotCounts::default())).collect(),
        ..Default::default()
    };
    let mut examples = Vec::with_capacity(train.len());
    for record in &train.records {
        let mut candidates = Vec::with_capacity(5);
        let mut retrieved_from = BTreeMap::new();
        for category in IssueCategory::ALL {
            let candidate = if category == record.category {
                report.histogram.entry(category).or_default().ground_truth += 1;
                CandidateComment::new(category, record.comment.clone(), CandidateSource::Generated)
            } else {
                match (mode, &indices) {
                    (CriticCorpusMode::Ccr { .. }, Some(idx)) => {
                        ccr_slot(record, category, idx, &mut report, &mut retrieved_from)?
                    }
                    (CriticCorpusMode::Generated(cfg), _) => generated_slot(record, category, cfg, &mut report)?,
                    (CriticCorpusMode::Ccr { .. }, None) => unreachable!("indices are built for CCR mode"),
                }
            };
            candidates.push(candidate);
        }
        report.instances += 1;
        examples.push(CriticExample { record_id: record.id().to_string(), candidates, retrieved_from });
    }
    Ok((examples, report))
}

/// Render a critic example as an instruction-tuning instance.
pub fn critic_instance(record: &ReviewRecord, example: &CriticExample) -> Result<TrainingInstance, PromptError> {
    Ok(TrainingInstance {
        instruction: prompts::critic_head(),
        input: prompts::critic_query(&record.diff, &example.candidates)?,
        output: format!("Selected Category: {}\nReview Comment: {}", record.category.name(), record.comment),
    })
}

pub fn build_critic_corpus(
    train: &Corpus,
    mode: &CriticCorpusMode,
) -> Result<(Vec<TrainingInstance>, CriticCorpusReport), TrainsetError> {
    let (examples, report) = build_critic_examples(train, mode)?;
    let instances = train
        .records
        .iter()
        .zip(&examples)
        .map(|(r, e)| critic_instance(r, e))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((instances, report))
}

/// One `{"instruction","input","output"}` object per line. Returns the
/// number of lines written.
pub fn export_jsonl(instances: &[TrainingInstance], path: impl AsRef<Path>) -> io::Result<usize> {
    let mut out = BufWriter::new(File::create(path)?);
    for instance in instances {
        serde_json::to_writer(&mut out, instance)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(instances.len())
}

pub fn import_jsonl(path: impl AsRef<Path>) -> Result<Vec<TrainingInstance>, TrainsetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut instances = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let instance = serde_json::from_str(&line)
            .map_err(|e| TrainsetError::BadInstance { line: i + 1, message: e.to_string() })?;
        instances.push(instance);
    }
    Ok(instances)
}

pub fn commentator_file_name(category: IssueCategory) -> String {
    format!("commentator_{}.jsonl", category.name())
}

/// Write the five commentator files, `critic.jsonl` and `report.json`
/// under `outdir`. Returns the paths written.
pub fn write_training_set(
    outdir: impl AsRef<Path>,
    commentators: &BTreeMap<IssueCategory, Vec<TrainingInstance>>,
    critic: &[TrainingInstance],
    report: &CriticCorpusReport,
) -> io::Result<Vec<PathBuf>> {
    let outdir = outdir.as_ref();
    fs::create_dir_all(outdir)?;
    let mut written = Vec::new();
    for category in IssueCategory::ALL {
        let path = outdir.join(commentator_file_name(category));
        export_jsonl(commentators.get(&category).map_or(&[][..], Vec::as_slice), &path)?;
        written.push(path);
    }
    let path = outdir.join("critic.jsonl");
    export_jsonl(critic, &path)?;
    written.push(path);
    let path = outdir.join("report.json");
    fs::write(&path, serde_json::to_string_pretty(report)? + "\n")?;
    written.push(path);
    Ok(written)
}
