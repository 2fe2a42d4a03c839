//! Joining predictions to reference comments and reporting metrics.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use revagent::corpus::{Corpus, IssueCategory};
use revagent::evalmetrics::{evaluate, EmbeddingProvider, EvalError, EvalRecord, HashingEmbedder, HttpEmbedder};
use serde_json::Value;

use crate::CliError;

/// A generated comment keyed by diff id, with the selected category when
/// the run produced one.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub diff_id: String,
    pub comment: String,
    pub category: Option<IssueCategory>,
}

fn prediction_from(value: &Value) -> Option<Prediction> {
    let diff_id = value.get("diff_id")?.as_str()?.to_string();
    // Review output carries the choice under "verdict"; flat records carry
    // it at the top level.
    let (comment, category) = match value.get("verdict") {
        Some(v) => (v.get("comment"), v.get("category")),
        None => (value.get("generated_comment"), value.get("predicted_category")),
    };
    let comment = comment?.as_str()?.to_string();
    let category = category.and_then(Value::as_str).and_then(|c| c.parse().ok());
    Some(Prediction { diff_id, comment, category })
}

/// Read prediction lines. Failure markers and unreadable lines are
/// skipped; the second value is how many were.
pub fn read_predictions(path: &Path) -> Result<(Vec<Prediction>, usize), CliError> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut predictions = Vec::new();
    let mut skipped = 0;
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        match prediction_from(&value) {
            Some(p) if value.get("error").is_none() => predictions.push(p),
            _ => skipped += 1,
        }
    }
    Ok((predictions, skipped))
}

/// Pair predictions with reference records by id. Returns the joined
/// records and the number of prediction ids with no reference.
pub fn join_predictions(predictions: &[Prediction], reference: &Corpus) -> (Vec<EvalRecord>, usize) {
    let mut joined = Vec::new();
    let mut unmatched = 0;
    for p in predictions {
        match reference.get(&p.diff_id) {
            Some(r) => joined.push(EvalRecord {
                diff_id: p.diff_id.clone(),
                generated_comment: p.comment.clone(),
                reference_comment: r.comment.clone(),
                predicted_category: p.category,
                gold_category: r.category,
            }),
            None => unmatched += 1,
        }
    }
    (joined, unmatched)
}

pub(crate) fn cmd_eval(
    pred: &Path,
    reference: &Path,
    embedder: &str,
    batch_size: usize,
    json: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let (predictions, skipped) = read_predictions(pred)?;
    let corpus = crate::load(reference)?;
    let (records, unmatched) = join_predictions(&predictions, &corpus);
    if skipped > 0 {
        writeln!(err, "warning: skipped {skipped} failed or unreadable prediction(s)")?;
    }
    if unmatched > 0 {
        writeln!(err, "warning: {unmatched} prediction id(s) have no reference record and were excluded")?;
    }
    if records.is_empty() {
        return Err(CliError::EmptyJoin(format!(
            "no prediction id in {} matches a record in {}",
            pred.display(),
            reference.display()
        )));
    }
    let provider: Box<dyn EmbeddingProvider> = if embedder == "mock" {
        Box::new(HashingEmbedder::default())
    } else {
        Box::new(HttpEmbedder::new(embedder).map_err(|e| CliError::Backend(e.to_string()))?)
    };
    let report = evaluate(&records, provider.as_ref(), batch_size).map_err(|e| match e {
        EvalError::EmptyInput => CliError::EmptyJoin(e.to_string()),
        EvalError::Embed(_) => CliError::Backend(e.to_string()),
    })?;
    write!(out, "{}", report.render_table())?;
    let text = serde_json::to_string_pretty(&report)?;
    writeln!(out, "{text}")?;
    if let Some(path) = json {
        fs::write(path, text + "\n")?;
    }
    Ok(())
}
