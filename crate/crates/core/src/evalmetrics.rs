//! Text-similarity metrics (BLEU-4, ROUGE-L, METEOR, SBERT cosine) and
//! issue-category prediction accuracy, aggregated per gold category.
//!
//! All scores are on a 0-100 scale. BLEU, ROUGE-L and METEOR share
//! [`metric_tokens`]: lowercase, split on whitespace, every other
//! non-alphanumeric character is a token of its own.

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::IssueCategory;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to evaluate")]
    EmptyInput,
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("embedding provider unavailable: {0}")]
    EmbedderUnavailable(String),
}

pub fn metric_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence-level BLEU-4 on token lists. Clipped n-gram precisions with
/// add-one smoothing for n >= 2 when no n-gram matches; uniform weights;
/// brevity penalty exp(1 - r/c) when the candidate is shorter.
pub fn bleu4_tokens(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand = ngram_counts(candidate, n);
        let refr = ngram_counts(reference, n);
        let matched: usize = cand.iter().map(|(g, &c)| c.min(refr.get(g).copied().unwrap_or(0))).sum();
        let total = candidate.len().saturating_sub(n - 1);
        let precision = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += precision.ln() / 4.0;
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    (bp * log_sum.exp() * 100.0).clamp(0.0, 100.0)
}

pub fn bleu4(candidate: &str, reference: &str) -> f64 {
    bleu4_tokens(&metric_tokens(candidate), &metric_tokens(reference))
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            row[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(row[j]) };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// ROUGE-L F1 on token lists.
pub fn rouge_l_tokens(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    if p + r == 0.0 {
        return 0.0;
    }
    2.0 * p * r / (p + r) * 100.0
}

pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    rouge_l_tokens(&metric_tokens(candidate), &metric_tokens(reference))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
    /// False when the search budget ran out and `chunks` is the best found
    /// rather than the proven minimum.
    pub exact: bool,
}

/// Node budget for the chunk-minimising search.
const ALIGNMENT_BUDGET: u64 = 100_000;

struct ChunkSearch<'a> {
    cand: &'a [usize],
    options: Vec<Vec<usize>>,
    used: Vec<bool>,
    rem_cand: Vec<usize>,
    free_ref: Vec<usize>,
    matches: usize,
    best: usize,
    nodes: u64,
}

impl ChunkSearch<'_> {
    /// Depth-first over candidate positions. `prev` is the reference
    /// position matched by the previous candidate token, if any.
    fn run(&mut self, i: usize, prev: Option<usize>, matched: usize, chunks: usize) {
        if chunks >= self.best || self.nodes >= ALIGNMENT_BUDGET {
            return;
        }
        self.nodes += 1;
        if i == self.cand.len() {
            self.best = chunks;
            return;
        }
        let w = self.cand[i];
        let continuation = prev.map(|p| p + 1).filter(|j| self.options[i].contains(j) && !self.used[*j]);
        // Any further match other than extending the current run opens a chunk.
        if matched < self.matches && continuation.is_none() && chunks + 1 >= self.best {
            return;
        }
        if self.free_ref[w] > 0 {
            let mut order: Vec<usize> = continuation.into_iter().collect();
            order.extend(self.options[i].iter().copied().filter(|&j| Some(j) != continuation && !self.used[j]));
            for j in order {
                let cost = usize::from(continuation != Some(j));
                self.used[j] = true;
                self.rem_cand[w] -= 1;
                self.free_ref[w] -= 1;
                self.run(i + 1, Some(j), matched + 1, chunks + cost);
                self.used[j] = false;
                self.rem_cand[w] += 1;
                self.free_ref[w] += 1;
            }
        }
        // Leaving this token unmatched keeps the maximum reachable only if
        // later occurrences can still use every free reference slot.
        if self.rem_cand[w] > self.free_ref[w] {
            self.rem_cand[w] -= 1;
            self.run(i + 1, None, matched, chunks);
            self.rem_cand[w] += 1;
        }
    }
}

/// Chunk count of a maximal alignment built by repeatedly tiling the
/// longest run of still-free equal tokens. Upper bound for the search.
fn greedy_chunks(cand: &[usize], refr: &[usize]) -> usize {
    let mut cand_used = vec![false; cand.len()];
    let mut ref_used = vec![false; refr.len()];
    let mut pairs = Vec::new();
    loop {
        let (mut len, mut at) = (0, (0, 0));
        for i in (0..cand.len()).filter(|&i| !cand_used[i]) {
            for j in (0..refr.len()).filter(|&j| !ref_used[j] && refr[j] == cand[i]) {
                let mut l = 0;
                while i + l < cand.len()
                    && j + l < refr.len()
                    && !cand_used[i + l]
                    && !ref_used[j + l]
                    && cand[i + l] == refr[j + l]
                {
                    l += 1;
                }
                if l > len {
                    (len, at) = (l, (i, j));
                }
            }
        }
        if len == 0 {
            break;
        }
        for k in 0..len {
            cand_used[at.0 + k] = true;
            ref_used[at.1 + k] = true;
            pairs.push((at.0 + k, at.1 + k));
        }
    }
    pairs.sort_unstable();
    (0..pairs.len())
        .filter(|&k| k == 0 || pairs[k] != (pairs[k - 1].0 + 1, pairs[k - 1].1 + 1))
        .count()
}

fn intern<'a>(tokens: &'a [String], vocab: &mut HashMap<&'a str, usize>) -> Vec<usize> {
    tokens
        .iter()
        .map(|t| {
            let next = vocab.len();
            *vocab.entry(t.as_str()).or_insert(next)
        })
        .collect()
}

/// Exact-match unigram alignment: the maximum number of matches, and among
/// maximum alignments the fewest chunks (runs contiguous in both strings).
pub fn align(candidate: &[String], reference: &[String]) -> Alignment {
    let mut vocab: HashMap<&str, usize> = HashMap::new();
    let cand: Vec<usize> = intern(candidate, &mut vocab);
    let refr: Vec<usize> = intern(reference, &mut vocab);
    let mut rem_cand = vec![0usize; vocab.len()];
    let mut free_ref = vec![0usize; vocab.len()];
    cand.iter().for_each(|&w| rem_cand[w] += 1);
    refr.iter().for_each(|&w| free_ref[w] += 1);
    let matches = rem_cand.iter().zip(&free_ref).map(|(a, b)| *a.min(b)).sum();
    if matches == 0 {
        return Alignment { matches: 0, chunks: 0, exact: true };
    }
    let options = cand
        .iter()
        .map(|&w| refr.iter().enumerate().filter(|(_, &r)| r == w).map(|(j, _)| j).collect())
        .collect();
    let mut search = ChunkSearch {
        cand: &cand,
        options,
        used: vec![false; refr.len()],
        rem_cand,
        free_ref,
        matches,
        best: greedy_chunks(&cand, &refr),
        nodes: 0,
    };
    search.run(0, None, 0, 0);
    Alignment { matches, chunks: search.best, exact: search.nodes < ALIGNMENT_BUDGET }
}

/// METEOR from an alignment: Fmean = 10PR/(R+9P), penalty = 0.5 (chunks/m)^3.
pub fn meteor_score(alignment: Alignment, candidate_len: usize, reference_len: usize) -> f64 {
    if alignment.matches == 0 {
        return 0.0;
    }
    let m = alignment.matches as f64;
    let p = m / candidate_len as f64;
    let r = m / reference_len as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (alignment.chunks as f64 / m).powi(3);
    fmean * (1.0 - penalty) * 100.0
}

pub fn meteor_tokens(candidate: &[String], reference: &[String]) -> f64 {
    meteor_score(align(candidate, reference), candidate.len(), reference.len())
}

pub fn meteor(candidate: &str, reference: &str) -> f64 {
    meteor_tokens(&metric_tokens(candidate), &metric_tokens(reference))
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

/// Cosine similarity clamped to [-1, 1]; zero vectors give 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

pub fn sbert_sim(candidate: &str, reference: &str, embedder: &dyn EmbeddingProvider) -> Result<f64, EmbedError> {
    let vectors = embedder.embed(&[candidate.to_string(), reference.to_string()])?;
    match &vectors[..] {
        [a, b] => Ok(cosine(a, b) * 100.0),
        _ => Err(EmbedError::EmbedderUnavailable(format!("expected 2 vectors, got {}", vectors.len()))),
    }
}

/// Offline stand-in for a sentence encoder: signed feature hashing of the
/// metric tokens into `dim` buckets, L2-normalised.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dim: 256 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

impl EmbeddingProvider for HashingEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts
            .iter()
            .map(|t| {
                let mut v = vec![0.0; self.dim];
                for token in metric_tokens(t) {
                    let h = fnv1a(token.as_bytes());
                    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                    v[(h % self.dim as u64) as usize] += sign;
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|x| *x /= norm);
                }
                v
            })
            .collect())
    }
}

/// Provider with fixed vectors per text; unknown texts are an error.
#[derive(Debug, Clone, Default)]
pub struct FixedEmbedder {
    pub vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingProvider for FixedEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        texts
            .iter()
            .map(|t| {
                self.vectors
                    .get(t)
                    .cloned()
                    .ok_or_else(|| EmbedError::EmbedderUnavailable(format!("no vector for {t:?}")))
            })
            .collect()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for an embedding service exposing `POST <endpoint>/embed`.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    endpoint: String,
}

impl HttpEmbedder {
    pub fn new(endpoint: &str) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| EmbedError::EmbedderUnavailable(e.to_string()))?;
        Ok(HttpEmbedder { client, endpoint: endpoint.trim_end_matches('/').to_string() })
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let unavailable = |e: reqwest::Error| EmbedError::EmbedderUnavailable(e.to_string());
        let resp = self
            .client
            .post(format!("{}/embed", self.endpoint))
            .json(&EmbedRequest { texts })
            .send()
            .map_err(unavailable)?;
        if !resp.status().is_success() {
            return Err(EmbedError::EmbedderUnavailable(format!("HTTP {}", resp.status())));
        }
        let body: EmbedResponse = resp.json().map_err(unavailable)?;
        if body.vectors.len() != texts.len() {
            return Err(EmbedError::EmbedderUnavailable(format!(
                "asked for {} vectors, got {}",
                texts.len(),
                body.vectors.len()
            )));
        }
        Ok(body.vectors)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub diff_id: String,
    pub generated_comment: String,
    pub reference_comment: String,
    #[serde(default)]
    pub predicted_category: Option<IssueCategory>,
    pub gold_category: IssueCategory,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalTally {
    pub c_correct: usize,
    pub c_total: usize,
}

impl EvalTally {
    pub fn percentage(&self) -> Option<f64> {
        (self.c_total > 0).then(|| 100.0 * self.c_correct as f64 / self.c_total as f64)
    }
}

fn tally<'a>(records: impl IntoIterator<Item = &'a EvalRecord>) -> EvalTally {
    let mut t = EvalTally::default();
    for r in records {
        if let Some(p) = r.predicted_category {
            t.c_total += 1;
            t.c_correct += usize::from(p == r.gold_category);
        }
    }
    t
}

/// Prediction accuracy over records that carry a predicted category.
/// Records without one (merge-mode output) do not enter the denominator.
pub fn pred_accuracy(records: &[EvalRecord]) -> Result<(EvalTally, f64), EvalError> {
    let t = tally(records);
    let pct = t.percentage().ok_or(EvalError::EmptyInput)?;
    Ok((t, pct))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordScores {
    pub bleu: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub sbert: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub count: usize,
    pub bleu: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub sbert: f64,
    /// `None` when no record in the row has a predicted category.
    pub pred_acc: Option<f64>,
    pub tally: EvalTally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_category: BTreeMap<IssueCategory, MetricRow>,
    pub aggregate: MetricRow,
}

/// Score each record. SBERT embeddings are requested in batches of
/// `batch_size` pairs; an empty generated comment scores 0 everywhere.
pub fn score_records(
    records: &[EvalRecord],
    embedder: &dyn EmbeddingProvider,
    batch_size: usize,
) -> Result<Vec<RecordScores>, EvalError> {
    let mut scores = Vec::with_capacity(records.len());
    for batch in records.chunks(batch_size.max(1)) {
        let texts: Vec<String> = batch
            .iter()
            .filter(|r| !r.generated_comment.trim().is_empty())
            .flat_map(|r| [r.generated_comment.clone(), r.reference_comment.clone()])
            .collect();
        let vectors = if texts.is_empty() { Vec::new() } else { embedder.embed(&texts)? };
        if vectors.len() != texts.len() {
            return Err(EmbedError::EmbedderUnavailable("vector count mismatch".into()).into());
        }
        let mut pairs = vectors.chunks(2);
        for r in batch {
            let cand = metric_tokens(&r.generated_comment);
            let refr = metric_tokens(&r.reference_comment);
            let sbert = if r.generated_comment.trim().is_empty() {
                0.0
            } else {
                let pair = pairs.next().expect("one pair per non-empty record");
                cosine(&pair[0], &pair[1]) * 100.0
            };
            scores.push(RecordScores {
                bleu: bleu4_tokens(&cand, &refr),
                rouge_l: rouge_l_tokens(&cand, &refr),
                meteor: meteor_tokens(&cand, &refr),
                sbert,
            });
        }
    }
    Ok(scores)
}

/// Mean of `values`, summed in sorted order so the result does not depend
/// on record order.
fn mean(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

fn row(pairs: &[(&EvalRecord, &RecordScores)]) -> MetricRow {
    let t = tally(pairs.iter().map(|(r, _)| *r));
    MetricRow {
        count: pairs.len(),
        bleu: mean(pairs.iter().map(|(_, s)| s.bleu).collect()),
        rouge_l: mean(pairs.iter().map(|(_, s)| s.rouge_l).collect()),
        meteor: mean(pairs.iter().map(|(_, s)| s.meteor).collect()),
        sbert: mean(pairs.iter().map(|(_, s)| s.sbert).collect()),
        pred_acc: t.percentage(),
        tally: t,
    }
}

/// Aggregate pre-computed scores. The aggregate row averages over records,
/// not over category means.
pub fn report_from_scores(records: &[EvalRecord], scores: &[RecordScores]) -> Result<MetricReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let pairs: Vec<_> = records.iter().zip(scores).collect();
    let per_category = IssueCategory::ALL
        .iter()
        .filter_map(|&c| {
            let group: Vec<_> = pairs.iter().copied().filter(|(r, _)| r.gold_category == c).collect();
            (!group.is_empty()).then(|| (c, row(&group)))
        })
        .collect();
    Ok(MetricReport { per_category, aggregate: row(&pairs) })
}

pub fn evaluate(records: &[EvalRecord], embedder: &dyn EmbeddingProvider, batch_size: usize) -> Result<MetricReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let scores = score_records(records, embedder, batch_size)?;
    report_from_scores(records, &scores)
}

impl MetricReport {
    /// Plain-text table: one row per category, then the aggregate.
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<14} {:>7} {:>8} {:>8} {:>8} {:>8} {:>11}\n",
            "Category", "Count", "BLEU", "ROUGE-L", "METEOR", "SBERT", "Pred. Acc."
        );
        let rows = self
            .per_category
            .iter()
            .map(|(c, r)| (c.title(), r))
            .chain(std::iter::once(("Average", &self.aggregate)));
        for (name, r) in rows {
            let acc = r.pred_acc.map_or_else(|| "-".to_string(), |a| format!("{a:.2}%"));
            out.push_str(&format!(
                "{:<14} {:>7} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>11}\n",
                name, r.count, r.bleu, r.rouge_l, r.meteor, r.sbert, acc
            ));
        }
        out
    }
}
