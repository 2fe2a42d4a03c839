//! Batch review with a worker pool. Results are written in input order as
//! soon as every earlier entry is done, one JSON object per line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use revagent::corpus::{parse_diff_hunk, DiffHunk};
use revagent::pipeline::{review, PipelineConfig, PipelineError, ReviewOutput};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone)]
pub struct BatchEntry {
    pub id: String,
    pub diff: DiffHunk,
}

#[derive(Deserialize)]
struct RawEntry {
    #[serde(default)]
    id: Option<String>,
    diff: String,
}

/// Read `{"id"?, "diff"}` lines; other fields (such as a corpus record's
/// comment) are ignored. Ids default to the 1-based line number.
pub fn read_batch(path: &Path) -> Result<Vec<BatchEntry>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| CliError::Io(format!("{}:{}: {msg}", path.display(), i + 1));
        let raw: RawEntry = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let id = raw.id.unwrap_or_else(|| (i + 1).to_string());
        let diff = parse_diff_hunk(&raw.diff).map_err(|e| bad(e.to_string()))?.with_id(id.clone());
        entries.push(BatchEntry { id, diff });
    }
    Ok(entries)
}

/// Written in place of an output when a diff could not be reviewed.
#[derive(Debug, Serialize)]
struct FailureMarker<'a> {
    diff_id: &'a str,
    error: FailureDetail,
}

#[derive(Debug, Serialize)]
struct FailureDetail {
    exit_code: i32,
    message: String,
}

#[derive(Debug, Default)]
pub struct BatchSummary {
    pub reviewed: usize,
    pub failed: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_seconds: f64,
    /// Error of the earliest failed entry in input order.
    pub first_error: Option<CliError>,
}

impl BatchSummary {
    fn record(&mut self, output: &ReviewOutput) {
        self.reviewed += 1;
        self.prompt_tokens += output.telemetry.total_prompt_tokens;
        self.completion_tokens += output.telemetry.total_completion_tokens;
        self.wall_seconds += output.telemetry.wall_seconds;
    }

    /// Averages per reviewed diff, mirroring the usual cost report.
    pub fn describe(&self) -> String {
        let n = self.reviewed.max(1) as f64;
        format!(
            "reviewed {} diff(s), {} failed; avg tokens {:.1} (prompt {:.1}, completion {:.1}); avg seconds {:.3}",
            self.reviewed,
            self.failed,
            (self.prompt_tokens + self.completion_tokens) as f64 / n,
            self.prompt_tokens as f64 / n,
            self.completion_tokens as f64 / n,
            self.wall_seconds / n,
        )
    }
}

fn write_line(out: &mut dyn Write, entry: &BatchEntry, result: &Result<ReviewOutput, PipelineError>) -> io::Result<()> {
    match result {
        Ok(output) => serde_json::to_writer(&mut *out, output)?,
        Err(e) => {
            let marker = FailureMarker {
                diff_id: &entry.id,
                error: FailureDetail { exit_code: CliError::from_pipeline(e).exit_code(), message: e.to_string() },
            };
            serde_json::to_writer(&mut *out, &marker)?;
        }
    }
    out.write_all(b"\n")?;
    out.flush()
}

/// Review every entry with `workers` threads. Each line is flushed as soon
/// as it is next in input order, so partial progress survives a crash.
pub fn review_batch(
    entries: &[BatchEntry],
    cfg: &PipelineConfig,
    workers: usize,
    out: &mut dyn Write,
) -> io::Result<BatchSummary> {
    let mut summary = BatchSummary::default();
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    thread::scope(|s| -> io::Result<()> {
        for _ in 0..workers.clamp(1, entries.len().max(1)) {
            let tx = tx.clone();
            let next = &next;
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= entries.len() {
                    break;
                }
                if tx.send((i, review(&entries[i].diff, cfg))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut cursor = 0;
        for (i, result) in rx {
            pending.insert(i, result);
            while let Some(result) = pending.remove(&cursor) {
                write_line(out, &entries[cursor], &result)?;
                match result {
                    Ok(output) => summary.record(&output),
                    Err(e) => {
                        summary.failed += 1;
                        summary.first_error.get_or_insert(CliError::from_pipeline(&e));
                    }
                }
                cursor += 1;
            }
        }
        Ok(())
    })?;
    Ok(summary)
}
