//! Issue-oriented multi-agent review comment generation.
//!
//! Five commentator agents each review a diff hunk from one issue category;
//! a critic agent selects the best issue-comment pair.

pub mod backend;
pub mod config;
pub mod corpus;
pub mod evalmetrics;
pub mod pipeline;
pub mod prompts;
pub mod retrieval;
pub mod trainset;

pub use backend::{ChatBackend, CriticVerdict, HttpBackend, MockBackend, MockEntry};
pub use config::AppConfig;
pub use corpus::{Corpus, DiffHunk, IssueCategory, ReviewRecord};
pub use pipeline::{review, CandidateComment, PipelineConfig, ReviewMode, ReviewOutput};
