//! Prompt rendering for commentator, critic, few-shot and merge-critic
//! agents. Every function here is pure: same inputs, same bytes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DiffHunk, IssueCategory};
use crate::pipeline::CandidateComment;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("the Others category has no commentator")]
    OthersCategory,
    #[error("expected 5 candidates, got {0}")]
    WrongCandidateCount(usize),
    #[error("candidate categories must be the five categories in canonical order; {0} is duplicated or misplaced")]
    DuplicateCategory(IssueCategory),
    #[error("few-shot prompts need between 1 and {MAX_EXEMPLARS} exemplars, got {0}")]
    NoExemplars(usize),
}

pub const MAX_EXEMPLARS: usize = 8;

pub const ROLE: &str = "You are an expert code reviewer.";

const NOTE: &str = "Note that code changes may be marked: Code lines that begin with a plus (+) sign \
indicate new code, while those that begin with a minus (-) sign indicate deleted code.";

const CRITIC_OVERVIEW: &str = "There is a code review process where a diff hunk is analyzed from five \
perspectives: 'refactoring', 'bugfix', 'testing', 'logging', and 'documentation', and then the review \
comments are generated.";

const CRITIC_SELECT: &str = "After analysis from these different perspectives by category-specific \
commentator agents, you are required to evaluate the five review comments generated and select the \
comment that best aligns with the issues present in the target diff hunk.";

pub const MERGE_INSTRUCTION: &str = "Please read these review comments and merge the suitable review comments.";

const CRITIC_DUTY: &str = "As a meticulous and harsh critic, your duty is to scrutinize these review \
comments and evaluate the identified issues with scores in terms of correctness.";

/// The per-category directive sentences inserted into commentator prompts.
pub struct DirectiveTable;

impl DirectiveTable {
    pub const ENTRIES: [(IssueCategory, &'static str); 5] = [
        (
            IssueCategory::Refactoring,
            "The diff hunk needs to be revised to refactor the code to improve its quality.",
        ),
        (IssueCategory::Bugfix, "The diff hunk needs to be revised to fix one or more bugs."),
        (
            IssueCategory::Testing,
            "The diff hunk needs to be revised since tests for this code must be written.",
        ),
        (
            IssueCategory::Logging,
            "The diff hunk needs to be revised to improve the logging of its execution.",
        ),
        (
            IssueCategory::Documentation,
            "The diff hunk needs to be revised to be more compliant with the documentation specification.",
        ),
    ];

    /// Full directive sentence; `None` for `Others`.
    pub fn sentence(category: IssueCategory) -> Option<&'static str> {
        Self::ENTRIES.iter().find(|(c, _)| *c == category).map(|(_, s)| *s)
    }

    /// The directive as it reads inside the task sentence: leading capital
    /// lowered, final period dropped.
    pub fn clause(category: IssueCategory) -> Option<String> {
        let sentence = Self::sentence(category)?;
        let body = sentence.strip_suffix('.').unwrap_or(sentence);
        let mut chars = body.chars();
        let first = chars.next()?;
        Some(first.to_lowercase().chain(chars).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// A rendered prompt. `role_messages` carries the system/user layout; their
/// concatenation is exactly `rendered`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub rendered: String,
    pub role_messages: Vec<Message>,
}

impl PromptText {
    fn from_parts(system: &str, user: String) -> Self {
        let rendered = format!("{system}{user}");
        PromptText {
            rendered,
            role_messages: vec![
                Message { role: Role::System, content: system.to_string() },
                Message { role: Role::User, content: user },
            ],
        }
    }

    /// Layout with the whole prompt in one user message.
    pub fn single_user(&self) -> Vec<Message> {
        vec![Message { role: Role::User, content: self.rendered.clone() }]
    }
}

fn role_block() -> String {
    format!("{ROLE}\n\n")
}

fn commentator_task(category: IssueCategory) -> Result<String, PromptError> {
    let clause = DirectiveTable::clause(category).ok_or(PromptError::OthersCategory)?;
    Ok(format!(
        "Give you a diff hunk, your task is to decide whether {clause}.\n\
         If the response to the above point is True, then write a code review.\n\n{NOTE}"
    ))
}

/// Instruction part of a commentator prompt (role, task, note). Training
/// instances use this as their instruction field.
pub fn commentator_head(category: IssueCategory) -> Result<String, PromptError> {
    Ok(format!("{}{}", role_block(), commentator_task(category)?))
}

/// Query part of a commentator prompt: the diff and the output format.
pub fn commentator_query(diff: &DiffHunk) -> String {
    format!(
        "For the new diff hunk:\n\n{}\n\nPlease output the review comment in the following format:\n\nReview Comment:...",
        diff.raw_text
    )
}

pub fn commentator_prompt(category: IssueCategory, diff: &DiffHunk) -> Result<PromptText, PromptError> {
    let user = format!("{}\n\n{}", commentator_task(category)?, commentator_query(diff));
    Ok(PromptText::from_parts(&role_block(), user))
}

/// Commentator prompt with demonstrations. `exemplars` are given most
/// similar first (retrieval order) and rendered most similar last, right
/// before the query.
pub fn fewshot_prompt(
    category: IssueCategory,
    diff: &DiffHunk,
    exemplars: &[(DiffHunk, String)],
) -> Result<PromptText, PromptError> {
    let task = commentator_task(category)?;
    if exemplars.is_empty() || exemplars.len() > MAX_EXEMPLARS {
        return Err(PromptError::NoExemplars(exemplars.len()));
    }
    let mut user = format!("{task}\n\nHere are some examples:\n\n");
    for (n, (example, comment)) in exemplars.iter().rev().enumerate() {
        user.push_str(&format!(
            "Example {}:\nFor the diff hunk:\n\n{}\n\nReview Comment: {}\n\n",
            n + 1,
            example.raw_text,
            comment.trim()
        ));
    }
    user.push_str(&commentator_query(diff));
    Ok(PromptText::from_parts(&role_block(), user))
}

fn check_candidates(candidates: &[CandidateComment]) -> Result<(), PromptError> {
    if candidates.len() != IssueCategory::ALL.len() {
        return Err(PromptError::WrongCandidateCount(candidates.len()));
    }
    for (candidate, expected) in candidates.iter().zip(IssueCategory::ALL) {
        if candidate.category != expected {
            return Err(PromptError::DuplicateCategory(candidate.category));
        }
    }
    Ok(())
}

fn candidates_block(candidates: &[CandidateComment]) -> String {
    let mut out = String::from("The review comments from the five perspectives are:\n");
    for c in candidates {
        out.push_str(&format!("\n[{}]\n{}\n", c.category.name(), c.text.trim()));
    }
    out
}

/// Instruction part of the critic prompt (role, task, duty).
pub fn critic_head() -> String {
    format!("{}{}", role_block(), critic_task(false))
}

fn critic_task(merge: bool) -> String {
    let instruction = if merge { MERGE_INSTRUCTION } else { CRITIC_SELECT };
    format!("{CRITIC_OVERVIEW}\n{instruction}\n\n{CRITIC_DUTY}")
}

/// Input part of the critic prompt: diff, labelled candidates and the
/// output format.
pub fn critic_query(diff: &DiffHunk, candidates: &[CandidateComment]) -> Result<String, PromptError> {
    check_candidates(candidates)?;
    Ok(format!(
        "For the new diff hunk:\n\n{}\n\n{}\n\
         Please select the most appropriate issue category and its review comment, and output them in the following format:\n\n\
         Selected Category: <category>\nReview Comment: <text>",
        diff.raw_text,
        candidates_block(candidates)
    ))
}

pub fn critic_prompt(diff: &DiffHunk, candidates: &[CandidateComment]) -> Result<PromptText, PromptError> {
    let user = format!("{}\n\n{}", critic_task(false), critic_query(diff, candidates)?);
    Ok(PromptText::from_parts(&role_block(), user))
}

/// Critic prompt for the merge variant: the selection instruction becomes
/// the merge instruction and the footer asks for a comment only.
pub fn msc_critic_prompt(diff: &DiffHunk, candidates: &[CandidateComment]) -> Result<PromptText, PromptError> {
    check_candidates(candidates)?;
    let user = format!(
        "{}\n\nFor the new diff hunk:\n\n{}\n\n{}\n\
         Please output the merged review comment in the following format:\n\nReview Comment: <text>",
        critic_task(true),
        diff.raw_text,
        candidates_block(candidates)
    );
    Ok(PromptText::from_parts(&role_block(), user))
}
