//! Python bindings: corpus loading, BM25 retrieval, prompt rendering,
//! metrics and the review pipeline.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use revagent::corpus::{compute_stats, load_corpus, parse_diff_hunk, DiffHunk, IssueCategory};
use revagent::evalmetrics::{self, EvalRecord, HashingEmbedder};
use revagent::pipeline::{self, CandidateComment, CandidateSource, ReviewMode};
use revagent::prompts;
use revagent::retrieval::{self, Bm25Index, CodeTokenizerConfig};
use revagent::AppConfig;

create_exception!(revagent_py, RevAgentError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    RevAgentError::new_err(e.to_string())
}

fn category(name: &str) -> PyResult<IssueCategory> {
    name.parse().map_err(|e: revagent::corpus::CorpusError| PyValueError::new_err(e.to_string()))
}

fn hunk(diff: &str) -> PyResult<DiffHunk> {
    parse_diff_hunk(diff).map_err(err)
}

/// Turn any serialisable value into plain Python objects via JSON.
fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = value.py().import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// A loaded review corpus.
#[pyclass(name = "Corpus", module = "revagent_py")]
struct PyCorpus {
    inner: revagent::Corpus,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyCorpus { inner: load_corpus(path).map_err(err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dropped_others(&self) -> usize {
        self.inner.dropped_others
    }

    #[getter]
    fn dropped_malformed(&self) -> usize {
        self.inner.dropped_malformed
    }

    fn ids(&self) -> Vec<String> {
        self.inner.records.iter().map(|r| r.id().to_string()).collect()
    }

    /// `(diff, comment, category)` for a record id, or `None`.
    fn get(&self, id: &str) -> Option<(String, String, String)> {
        self.inner.get(id).map(|r| (r.diff.raw_text.clone(), r.comment.clone(), r.category.name().to_string()))
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &compute_stats(&self.inner))
    }

    fn stats_table(&self) -> String {
        compute_stats(&self.inner).render_table()
    }
}

#[pyfunction]
#[pyo3(signature = (text, lowercase = true, split_identifiers = true, max_token_len = 64))]
fn tokenize_code(text: &str, lowercase: bool, split_identifiers: bool, max_token_len: usize) -> Vec<String> {
    retrieval::tokenize_code(text, &CodeTokenizerConfig { lowercase, split_identifiers, max_token_len })
}

/// Okapi BM25 index over `(doc_id, text)` pairs.
#[pyclass(name = "Bm25Index", module = "revagent_py")]
struct PyBm25Index {
    inner: Bm25Index,
}

#[pymethods]
impl PyBm25Index {
    #[new]
    #[pyo3(signature = (docs, k1 = retrieval::DEFAULT_K1, b = retrieval::DEFAULT_B))]
    fn new(docs: Vec<(String, String)>, k1: f64, b: f64) -> PyResult<Self> {
        let inner = Bm25Index::build(docs, CodeTokenizerConfig::default(), k1, b).map_err(err)?;
        Ok(PyBm25Index { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Top `k` hits as `(doc_id, score, rank)`.
    #[pyo3(signature = (text, k = 5))]
    fn query(&self, text: &str, k: usize) -> Vec<(String, f64, usize)> {
        self.inner.query(text, k).into_iter().map(|h| (h.doc_id, h.score, h.rank)).collect()
    }
}

#[pyfunction]
fn commentator_prompt(category_name: &str, diff: &str) -> PyResult<String> {
    Ok(prompts::commentator_prompt(category(category_name)?, &hunk(diff)?).map_err(err)?.rendered)
}

/// Critic prompt for five candidate comments given in canonical category
/// order. `merge=True` renders the merge-style variant.
#[pyfunction]
#[pyo3(signature = (diff, comments, merge = false))]
fn critic_prompt(diff: &str, comments: Vec<String>, merge: bool) -> PyResult<String> {
    if comments.len() != IssueCategory::ALL.len() {
        return Err(PyValueError::new_err(format!("expected 5 comments, got {}", comments.len())));
    }
    let candidates: Vec<CandidateComment> = IssueCategory::ALL
        .iter()
        .zip(comments)
        .map(|(&c, t)| CandidateComment::new(c, t, CandidateSource::Generated))
        .collect();
    let d = hunk(diff)?;
    let p = if merge { prompts::msc_critic_prompt(&d, &candidates) } else { prompts::critic_prompt(&d, &candidates) };
    Ok(p.map_err(err)?.rendered)
}

#[pyfunction]
fn bleu4(candidate: &str, reference: &str) -> f64 {
    evalmetrics::bleu4(candidate, reference)
}

#[pyfunction]
fn rouge_l(candidate: &str, reference: &str) -> f64 {
    evalmetrics::rouge_l(candidate, reference)
}

#[pyfunction]
fn meteor(candidate: &str, reference: &str) -> f64 {
    evalmetrics::meteor(candidate, reference)
}

/// Evaluate a list of record dicts (`diff_id`, `generated_comment`,
/// `reference_comment`, `gold_category`, optional `predicted_category`)
/// with the offline hashing embedder.
#[pyfunction]
#[pyo3(signature = (records, batch_size = 64))]
fn evaluate<'py>(records: &Bound<'py, PyAny>, batch_size: usize) -> PyResult<Bound<'py, PyAny>> {
    let py = records.py();
    let records: Vec<EvalRecord> = from_py(records)?;
    let report = evalmetrics::evaluate(&records, &HashingEmbedder::default(), batch_size).map_err(err)?;
    to_py(py, &report)
}

/// Review one diff with the pipeline described by a TOML config file.
#[pyfunction]
#[pyo3(signature = (diff, config, mode = None, diff_id = None))]
fn review<'py>(
    py: Python<'py>,
    diff: &str,
    config: PathBuf,
    mode: Option<&str>,
    diff_id: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let mode = match mode {
        None => None,
        Some("standard") => Some(ReviewMode::Standard),
        Some("sfa") => Some(ReviewMode::Sfa),
        Some("msc") => Some(ReviewMode::Msc),
        Some(other) => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    };
    let cfg = AppConfig::load(config).map_err(err)?.build_pipeline(mode).map_err(err)?;
    let mut d = hunk(diff)?;
    if let Some(id) = diff_id {
        d = d.with_id(id);
    }
    let output = py.detach(|| pipeline::review(&d, &cfg)).map_err(err)?;
    to_py(py, &output)
}

#[pymodule]
fn revagent_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RevAgentError", m.py().get_type::<RevAgentError>())?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyBm25Index>()?;
    m.add_function(wrap_pyfunction!(tokenize_code, m)?)?;
    m.add_function(wrap_pyfunction!(commentator_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(critic_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(bleu4, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(meteor, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(review, m)?)?;
    Ok(())
}
