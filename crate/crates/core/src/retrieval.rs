//! Okapi BM25 over diff text, and Candidate Comment Retrieval on top of
//! per-category indices.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, DiffHunk, IssueCategory};
use crate::pipeline::{CandidateComment, CandidateSource};

/// Leading line of every persisted index file.
pub const INDEX_HEADER: &str = "BM25v1";

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("duplicate document id {0:?}")]
    DuplicateDocId(String),
    #[error("cannot build an index over zero documents")]
    EmptyCorpus,
    #[error("invalid BM25 parameters k1={k1}, b={b}")]
    InvalidParams { k1: f64, b: f64 },
    #[error("no index (or an empty one) for category {0}")]
    EmptyCategoryIndex(IssueCategory),
    #[error("query shares no terms with the {0} index")]
    NoHit(IssueCategory),
    #[error("unsupported index file: expected header {INDEX_HEADER:?}, found {0:?}")]
    BadHeader(String),
    #[error("corrupt index file: {0}")]
    Corrupt(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodeTokenizerConfig {
    pub lowercase: bool,
    pub split_identifiers: bool,
    pub max_token_len: usize,
}

impl Default for CodeTokenizerConfig {
    fn default() -> Self {
        CodeTokenizerConfig { lowercase: true, split_identifiers: true, max_token_len: 64 }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum CharClass {
    Upper,
    Lower,
    Digit,
}

fn class_of(c: char) -> CharClass {
    if c.is_numeric() {
        CharClass::Digit
    } else if c.is_uppercase() {
        CharClass::Upper
    } else {
        CharClass::Lower
    }
}

/// Split an alphanumeric run at lower->upper and letter<->digit boundaries,
/// and before the last capital of an acronym that starts a word
/// ("parseHTTPHeader" -> "parse", "HTTP", "Header").
fn split_identifier(word: &str, out: &mut Vec<String>) {
    let chars: Vec<(usize, char)> = word.char_indices().collect();
    let mut start = 0;
    for k in 1..chars.len() {
        let (i, c) = chars[k];
        let prev = class_of(chars[k - 1].1);
        let class = class_of(c);
        let next_lower = chars.get(k + 1).is_some_and(|&(_, n)| class_of(n) == CharClass::Lower);
        let boundary = match (prev, class) {
            (CharClass::Lower, CharClass::Upper) => true,
            (CharClass::Upper, CharClass::Upper) => next_lower,
            (CharClass::Digit, CharClass::Upper | CharClass::Lower) => true,
            (CharClass::Upper | CharClass::Lower, CharClass::Digit) => true,
            _ => false,
        };
        if boundary {
            out.push(word[start..i].to_string());
            start = i;
        }
    }
    out.push(word[start..].to_string());
}

pub fn tokenize_code(text: &str, cfg: &CodeTokenizerConfig) -> Vec<String> {
    let mut pieces = Vec::new();
    for word in text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        if cfg.split_identifiers {
            split_identifier(word, &mut pieces);
        } else {
            pieces.push(word.to_string());
        }
    }
    pieces
        .into_iter()
        .map(|t| if cfg.lowercase { t.to_lowercase() } else { t })
        .filter(|t| !t.is_empty() && t.chars().count() <= cfg.max_token_len)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Collection-level quantities that enter every BM25 score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectionStats {
    pub doc_count: usize,
    pub avg_doc_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    pub doc_ids: Vec<String>,
    pub doc_lengths: Vec<u32>,
    pub postings: BTreeMap<String, Vec<Posting>>,
    pub avg_doc_len: f64,
    pub k1: f64,
    pub b: f64,
    pub tokenizer: CodeTokenizerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Nonnegative Okapi idf.
pub fn idf(doc_count: usize, df: usize) -> f64 {
    let (n, df) = (doc_count as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

impl Bm25Index {
    pub fn build<I, S, T>(docs: I, cfg: CodeTokenizerConfig, k1: f64, b: f64) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        if !(k1 > 0.0) || !(0.0..=1.0).contains(&b) {
            return Err(RetrievalError::InvalidParams { k1, b });
        }
        let mut doc_ids = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut seen = HashSet::new();
        for (ordinal, (id, text)) in docs.into_iter().enumerate() {
            let id: String = id.into();
            if !seen.insert(id.clone()) {
                return Err(RetrievalError::DuplicateDocId(id));
            }
            let tokens = tokenize_code(text.as_ref(), &cfg);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting { doc: ordinal as u32, tf: count });
            }
            doc_ids.push(id);
            doc_lengths.push(tokens.len() as u32);
        }
        if doc_ids.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let avg_doc_len = doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64;
        Ok(Bm25Index { doc_ids, doc_lengths, postings, avg_doc_len, k1, b, tokenizer: cfg })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn stats(&self) -> CollectionStats {
        CollectionStats { doc_count: self.doc_ids.len(), avg_doc_len: self.avg_doc_len }
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// Distinct query terms in sorted order; scores sum over these.
    pub fn query_terms(&self, text: &str) -> Vec<String> {
        tokenize_code(text, &self.tokenizer).into_iter().collect::<BTreeSet<_>>().into_iter().collect()
    }

    fn term_weight(&self, tf: u32, doc_len: u32, stats: CollectionStats) -> f64 {
        let tf = tf as f64;
        let norm = if stats.avg_doc_len > 0.0 { doc_len as f64 / stats.avg_doc_len } else { 0.0 };
        tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * norm))
    }

    /// Score every document with a nonzero score under the given collection
    /// statistics. Accumulation runs over `terms` in the order given.
    pub fn score_all(&self, terms: &[String], stats: CollectionStats) -> HashMap<u32, f64> {
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in terms {
            let Some(list) = self.postings.get(term) else { continue };
            let w = idf(stats.doc_count, list.len());
            for p in list {
                let s = w * self.term_weight(p.tf, self.doc_lengths[p.doc as usize], stats);
                *scores.entry(p.doc).or_insert(0.0) += s;
            }
        }
        scores
    }

    pub fn query(&self, text: &str, k: usize) -> Vec<RetrievalHit> {
        self.query_filtered(text, k, |_| true)
    }

    /// Top-k hits among documents accepted by `keep`, ordered by score
    /// descending then doc id ascending. Zero scores are never returned.
    pub fn query_filtered(&self, text: &str, k: usize, keep: impl Fn(&str) -> bool) -> Vec<RetrievalHit> {
        let terms = self.query_terms(text);
        let mut scored: Vec<(u32, f64)> = self
            .score_all(&terms, self.stats())
            .into_iter()
            .filter(|&(doc, s)| s > 0.0 && keep(&self.doc_ids[doc as usize]))
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.doc_ids[a.0 as usize].cmp(&self.doc_ids[b.0 as usize]))
        });
        scored
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(i, (doc, score))| RetrievalHit {
                doc_id: self.doc_ids[doc as usize].clone(),
                score,
                rank: i + 1,
            })
            .collect()
    }
}

/// A category's BM25 index together with the comment of each indexed diff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryIndex {
    pub category: IssueCategory,
    pub index: Bm25Index,
    pub comments: BTreeMap<String, String>,
}

impl CategoryIndex {
    pub fn build(
        corpus: &Corpus,
        category: IssueCategory,
        cfg: CodeTokenizerConfig,
        k1: f64,
        b: f64,
    ) -> Result<Self, RetrievalError> {
        let records: Vec<_> = corpus.by_category(category).collect();
        let index = Bm25Index::build(records.iter().map(|r| (r.id(), r.diff.raw_text.as_str())), cfg, k1, b)
            .map_err(|e| match e {
                RetrievalError::EmptyCorpus => RetrievalError::EmptyCategoryIndex(category),
                e => e,
            })?;
        let comments = records.iter().map(|r| (r.id().to_string(), r.comment.clone())).collect();
        Ok(CategoryIndex { category, index, comments })
    }

    pub fn comment(&self, doc_id: &str) -> Option<&str> {
        self.comments.get(doc_id).map(String::as_str)
    }

    /// Comment of the longest (by characters) comment in the category, ties
    /// to the smallest doc id.
    pub fn longest_comment(&self) -> Option<(&str, &str)> {
        self.comments
            .iter()
            .max_by(|a, b| a.1.chars().count().cmp(&b.1.chars().count()).then_with(|| b.0.cmp(a.0)))
            .map(|(id, c)| (id.as_str(), c.as_str()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let body = serde_json::to_string(self).map_err(|e| RetrievalError::Corrupt(e.to_string()))?;
        fs::write(path, format!("{INDEX_HEADER}\n{body}\n"))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let text = fs::read_to_string(path)?;
        let (header, body) = text.split_once('\n').unwrap_or((text.as_str(), ""));
        if header != INDEX_HEADER {
            return Err(RetrievalError::BadHeader(header.chars().take(32).collect()));
        }
        serde_json::from_str(body).map_err(|e| RetrievalError::Corrupt(e.to_string()))
    }
}

/// One [`CategoryIndex`] per reviewable category.
#[derive(Debug, Clone, Default)]
pub struct CategoryIndices {
    pub indices: BTreeMap<IssueCategory, CategoryIndex>,
}

impl CategoryIndices {
    /// Build an index per category. Categories with no records are skipped;
    /// querying them yields `EmptyCategoryIndex`.
    pub fn build(corpus: &Corpus, cfg: CodeTokenizerConfig, k1: f64, b: f64) -> Result<Self, RetrievalError> {
        let mut indices = BTreeMap::new();
        for category in IssueCategory::ALL {
            match CategoryIndex::build(corpus, category, cfg, k1, b) {
                Ok(idx) => {
                    indices.insert(category, idx);
                }
                Err(RetrievalError::EmptyCategoryIndex(_)) => {
                    log::warn!("no training records for category {category}; its index is empty");
                }
                Err(e) => return Err(e),
            }
        }
        Ok(CategoryIndices { indices })
    }

    pub fn get(&self, category: IssueCategory) -> Result<&CategoryIndex, RetrievalError> {
        self.indices
            .get(&category)
            .filter(|i| !i.index.is_empty())
            .ok_or(RetrievalError::EmptyCategoryIndex(category))
    }
}

/// Candidate Comment Retrieval: the comment attached to the most similar
/// category-`category` diff, excluding documents rejected by `keep`.
pub fn ccr_filtered(
    diff: &DiffHunk,
    category: IssueCategory,
    indices: &CategoryIndices,
    keep: impl Fn(&str) -> bool,
) -> Result<(String, CandidateComment), RetrievalError> {
    let idx = indices.get(category)?;
    let hit = idx
        .index
        .query_filtered(&diff.raw_text, 1, keep)
        .into_iter()
        .next()
        .ok_or(RetrievalError::NoHit(category))?;
    let text = idx.comment(&hit.doc_id).ok_or_else(|| RetrievalError::Corrupt(format!("no comment for {}", hit.doc_id)))?;
    let candidate = CandidateComment::new(category, text, CandidateSource::Retrieved);
    Ok((hit.doc_id, candidate))
}

pub fn ccr(diff: &DiffHunk, category: IssueCategory, indices: &CategoryIndices) -> Result<CandidateComment, RetrievalError> {
    ccr_filtered(diff, category, indices, |_| true).map(|(_, c)| c)
}
