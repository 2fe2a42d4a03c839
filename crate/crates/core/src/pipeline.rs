//! Generate-then-select review orchestration.
//!
//! Five category commentators each produce one candidate comment for a diff;
//! a critic then picks the issue-comment pair that fits the diff best. The
//! single-fusion-agent (SFA) and merge-suitable-comments (MSC) variants are
//! modes of the same pipeline, and "fine-tuned" versus "few-shot" agents
//! differ only in their [`PromptStyle`] and model name.

use std::collections::HashMap;
use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    parse_commentator_response, parse_critic_response, parse_merge_response, sentinel_text, BackendError,
    ChatBackend, CriticVerdict, GenerationRequest, GenerationResult, TokenSource, VerdictError,
};
use crate::corpus::{Corpus, DiffHunk, IssueCategory};
use crate::prompts::{self, PromptError, PromptText};
use crate::retrieval::{CategoryIndices, CodeTokenizerConfig, RetrievalError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{agent}: {source}")]
    Backend {
        agent: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Verdict(#[from] VerdictError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateSource {
    Generated,
    Retrieved,
    Sentinel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateComment {
    pub category: IssueCategory,
    pub text: String,
    pub source: CandidateSource,
    pub declined: bool,
    /// Model that produced the comment, when generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Set when the response lacked the "Review Comment:" marker.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub lenient: bool,
}

impl CandidateComment {
    pub fn new(category: IssueCategory, text: impl Into<String>, source: CandidateSource) -> Self {
        CandidateComment {
            category,
            text: text.into(),
            source,
            declined: source == CandidateSource::Sentinel,
            model: None,
            lenient: false,
        }
    }

    pub fn sentinel(category: IssueCategory) -> Self {
        Self::new(category, sentinel_text(category), CandidateSource::Sentinel)
    }
}

/// Training diffs grouped by category, used to pick few-shot demonstrations.
#[derive(Debug, Clone)]
pub struct ExemplarPool {
    indices: CategoryIndices,
    diffs: HashMap<String, DiffHunk>,
    pub shots: usize,
}

impl ExemplarPool {
    pub fn build(train: &Corpus, cfg: CodeTokenizerConfig, k1: f64, b: f64, shots: usize) -> Result<Self, RetrievalError> {
        Ok(ExemplarPool {
            indices: CategoryIndices::build(train, cfg, k1, b)?,
            diffs: train.records.iter().map(|r| (r.id().to_string(), r.diff.clone())).collect(),
            shots,
        })
    }

    /// Most similar training pairs of `category` for `diff`, most similar
    /// first. The query's own id is never returned.
    pub fn exemplars(&self, category: IssueCategory, diff: &DiffHunk) -> Result<Vec<(DiffHunk, String)>, RetrievalError> {
        let idx = self.indices.get(category)?;
        let hits = idx.index.query_filtered(&diff.raw_text, self.shots, |id| id != diff.id);
        Ok(hits
            .into_iter()
            .filter_map(|h| Some((self.diffs.get(&h.doc_id)?.clone(), idx.comment(&h.doc_id)?.to_string())))
            .collect())
    }
}

#[derive(Clone)]
pub enum PromptStyle {
    /// Plain commentator prompt, as used by fine-tuned agents.
    Direct,
    /// Commentator prompt with BM25-retrieved demonstrations.
    FewShot(Arc<ExemplarPool>),
}

/// An agent is a backend, a model (or adapter) name and a prompt family.
#[derive(Clone)]
pub struct Agent {
    pub backend: Arc<dyn ChatBackend>,
    pub model_name: String,
    pub style: PromptStyle,
}

impl Agent {
    pub fn new(backend: Arc<dyn ChatBackend>, model_name: impl Into<String>) -> Self {
        Agent { backend, model_name: model_name.into(), style: PromptStyle::Direct }
    }

    pub fn with_style(mut self, style: PromptStyle) -> Self {
        self.style = style;
        self
    }

    fn commentator_prompt(&self, category: IssueCategory, diff: &DiffHunk) -> Result<PromptText, PipelineError> {
        match &self.style {
            PromptStyle::Direct => Ok(prompts::commentator_prompt(category, diff)?),
            PromptStyle::FewShot(pool) => {
                let exemplars = pool.exemplars(category, diff)?;
                if exemplars.is_empty() {
                    // No lexical overlap with any training diff of this category.
                    Ok(prompts::commentator_prompt(category, diff)?)
                } else {
                    Ok(prompts::fewshot_prompt(category, diff, &exemplars)?)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReviewMode {
    #[default]
    Standard,
    Sfa,
    Msc,
}

#[derive(Clone)]
pub struct PipelineConfig {
    /// One commentator per category, canonical order.
    pub commentators: Vec<Agent>,
    pub critic: Agent,
    /// Single agent used for every category in SFA mode.
    pub fusion: Option<Agent>,
    pub mode: ReviewMode,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Run the five commentator calls concurrently.
    pub parallel: bool,
    /// After two unparseable critic responses, select the Refactoring
    /// candidate instead of failing.
    pub majority_fallback: bool,
}

impl PipelineConfig {
    pub fn new(commentators: Vec<Agent>, critic: Agent) -> Self {
        PipelineConfig {
            commentators,
            critic,
            fusion: None,
            mode: ReviewMode::Standard,
            temperature: 0.0,
            max_tokens: crate::backend::DEFAULT_MAX_TOKENS,
            parallel: true,
            majority_fallback: false,
        }
    }

    fn request(&self, agent: &Agent, prompt: &PromptText) -> GenerationRequest {
        GenerationRequest {
            messages: prompt.role_messages.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            model_name: agent.model_name.clone(),
        }
    }
}

/// Usage of one agent call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub agent: String,
    pub model: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub seconds: f64,
    pub token_source: TokenSource,
}

impl CallRecord {
    fn new(agent: String, model: &str, r: &GenerationResult) -> Self {
        CallRecord {
            agent,
            model: model.to_string(),
            prompt_tokens: r.prompt_tokens,
            completion_tokens: r.completion_tokens,
            seconds: r.latency_seconds,
            token_source: r.token_source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTelemetry {
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
    /// Critical-path time: the slowest commentator call (or the sum of
    /// them when run sequentially) plus every critic call.
    pub wall_seconds: f64,
    /// Sum of all per-call latencies.
    pub summed_call_seconds: f64,
    pub per_agent: Vec<CallRecord>,
}

impl RunTelemetry {
    fn from_calls(generation: &[CallRecord], critic: &[CallRecord], parallel: bool) -> Self {
        let per_agent: Vec<CallRecord> = generation.iter().chain(critic).cloned().collect();
        let generation_time = if parallel {
            generation.iter().map(|c| c.seconds).fold(0.0, f64::max)
        } else {
            generation.iter().map(|c| c.seconds).sum()
        };
        RunTelemetry {
            total_prompt_tokens: per_agent.iter().map(|c| c.prompt_tokens).sum(),
            total_completion_tokens: per_agent.iter().map(|c| c.completion_tokens).sum(),
            wall_seconds: generation_time + critic.iter().map(|c| c.seconds).sum::<f64>(),
            summed_call_seconds: per_agent.iter().map(|c| c.seconds).sum(),
            per_agent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewOutput {
    pub diff_id: String,
    pub mode: ReviewMode,
    pub verdict: CriticVerdict,
    pub candidates: Vec<CandidateComment>,
    pub telemetry: RunTelemetry,
}

/// Five candidates plus the usage of the calls that produced them.
#[derive(Debug, Clone)]
pub struct Generation {
    pub candidates: Vec<CandidateComment>,
    pub calls: Vec<CallRecord>,
}

fn call_commentator(
    agent: &Agent,
    label: String,
    category: IssueCategory,
    diff: &DiffHunk,
    cfg: &PipelineConfig,
) -> Result<(CandidateComment, CallRecord), PipelineError> {
    let prompt = agent.commentator_prompt(category, diff)?;
    let result = agent
        .backend
        .complete(&cfg.request(agent, &prompt))
        .map_err(|source| PipelineError::Backend { agent: label.clone(), source })?;
    let mut candidate = parse_commentator_response(&result.text, category);
    candidate.model = Some(agent.model_name.clone());
    Ok((candidate, CallRecord::new(label, &agent.model_name, &result)))
}

fn generate_with(
    diff: &DiffHunk,
    agents: &[(&Agent, String)],
    cfg: &PipelineConfig,
) -> Result<Generation, PipelineError> {
    let jobs: Vec<_> = IssueCategory::ALL.iter().zip(agents).collect();
    let results: Vec<Result<(CandidateComment, CallRecord), PipelineError>> = if cfg.parallel {
        thread::scope(|s| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|&(&category, (agent, label))| s.spawn(move || call_commentator(agent, label.clone(), category, diff, cfg)))
                .collect();
            // Joined in spawn order, so results stay canonical whatever the
            // completion order.
            handles.into_iter().map(|h| h.join().expect("commentator thread panicked")).collect()
        })
    } else {
        jobs.iter()
            .map(|&(&category, (agent, label))| call_commentator(agent, label.clone(), category, diff, cfg))
            .collect()
    };
    let mut generation = Generation { candidates: Vec::with_capacity(5), calls: Vec::with_capacity(5) };
    for r in results {
        let (candidate, call) = r?;
        generation.candidates.push(candidate);
        generation.calls.push(call);
    }
    Ok(generation)
}

/// Ask each category commentator for a candidate. Any failure aborts: the
/// critic only ever sees complete five-candidate sets.
pub fn generate_candidates(diff: &DiffHunk, cfg: &PipelineConfig) -> Result<Generation, PipelineError> {
    if cfg.commentators.len() != IssueCategory::ALL.len() {
        return Err(PipelineError::Config(format!(
            "need one commentator per category, got {}",
            cfg.commentators.len()
        )));
    }
    let agents: Vec<(&Agent, String)> = cfg
        .commentators
        .iter()
        .zip(IssueCategory::ALL)
        .map(|(a, c)| (a, format!("commentator:{}", c.name())))
        .collect();
    generate_with(diff, &agents, cfg)
}

fn call_critic(agent: &Agent, prompt: &PromptText, cfg: &PipelineConfig, label: &str) -> Result<(String, CallRecord), PipelineError> {
    let result = agent
        .backend
        .complete(&cfg.request(agent, prompt))
        .map_err(|source| PipelineError::Backend { agent: label.to_string(), source })?;
    let call = CallRecord::new(label.to_string(), &agent.model_name, &result);
    Ok((result.text, call))
}

/// Critic selection. An unparseable response is retried once; a second
/// failure is an error unless `majority_fallback` is set, in which case the
/// Refactoring candidate is returned with `fallback = true`.
pub fn discriminate(
    diff: &DiffHunk,
    candidates: &[CandidateComment],
    cfg: &PipelineConfig,
) -> Result<(CriticVerdict, Vec<CallRecord>), PipelineError> {
    let prompt = prompts::critic_prompt(diff, candidates)?;
    let mut calls = Vec::new();
    let mut last_err = None;
    let mut last_text = String::new();
    for _ in 0..2 {
        let (text, call) = call_critic(&cfg.critic, &prompt, cfg, "critic")?;
        calls.push(call);
        match parse_critic_response(&text, candidates) {
            Ok(verdict) => return Ok((verdict, calls)),
            Err(e) => {
                last_err = Some(e);
                last_text = text;
            }
        }
    }
    if cfg.majority_fallback {
        let fallback = &candidates[0];
        let verdict = CriticVerdict {
            category: Some(fallback.category),
            comment: fallback.text.clone(),
            raw_response: last_text,
            fallback: true,
        };
        return Ok((verdict, calls));
    }
    Err(last_err.expect("two failed attempts").into())
}

fn merge(diff: &DiffHunk, candidates: &[CandidateComment], cfg: &PipelineConfig) -> Result<(CriticVerdict, Vec<CallRecord>), PipelineError> {
    let prompt = prompts::msc_critic_prompt(diff, candidates)?;
    let (text, call) = call_critic(&cfg.critic, &prompt, cfg, "critic")?;
    Ok((parse_merge_response(&text), vec![call]))
}

fn finish(diff: &DiffHunk, mode: ReviewMode, generation: Generation, verdict: CriticVerdict, critic_calls: Vec<CallRecord>, parallel: bool) -> ReviewOutput {
    ReviewOutput {
        diff_id: diff.id.clone(),
        mode,
        verdict,
        telemetry: RunTelemetry::from_calls(&generation.calls, &critic_calls, parallel),
        candidates: generation.candidates,
    }
}

/// Run the configured mode on one diff.
pub fn review(diff: &DiffHunk, cfg: &PipelineConfig) -> Result<ReviewOutput, PipelineError> {
    match cfg.mode {
        ReviewMode::Standard => review_standard(diff, cfg),
        ReviewMode::Sfa => review_sfa(diff, cfg),
        ReviewMode::Msc => review_msc(diff, cfg),
    }
}

pub fn review_standard(diff: &DiffHunk, cfg: &PipelineConfig) -> Result<ReviewOutput, PipelineError> {
    let generation = generate_candidates(diff, cfg)?;
    let (verdict, calls) = discriminate(diff, &generation.candidates, cfg)?;
    Ok(finish(diff, ReviewMode::Standard, generation, verdict, calls, cfg.parallel))
}

/// Single fusion agent invoked once per category directive, then the usual
/// critic selection.
pub fn review_sfa(diff: &DiffHunk, cfg: &PipelineConfig) -> Result<ReviewOutput, PipelineError> {
    let fusion = cfg
        .fusion
        .as_ref()
        .ok_or_else(|| PipelineError::Config("SFA mode needs a fusion agent".into()))?;
    let agents: Vec<(&Agent, String)> = IssueCategory::ALL
        .iter()
        .map(|c| (fusion, format!("fusion:{}", c.name())))
        .collect();
    let generation = generate_with(diff, &agents, cfg)?;
    let (verdict, calls) = discriminate(diff, &generation.candidates, cfg)?;
    Ok(finish(diff, ReviewMode::Sfa, generation, verdict, calls, cfg.parallel))
}

/// Standard generation; the critic merges suitable comments instead of
/// selecting one, so the verdict carries no category.
pub fn review_msc(diff: &DiffHunk, cfg: &PipelineConfig) -> Result<ReviewOutput, PipelineError> {
    let generation = generate_candidates(diff, cfg)?;
    let (verdict, calls) = merge(diff, &generation.candidates, cfg)?;
    Ok(finish(diff, ReviewMode::Msc, generation, verdict, calls, cfg.parallel))
}
