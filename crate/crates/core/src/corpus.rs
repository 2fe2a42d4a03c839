//! Review corpus data model: issue categories, diff hunks, JSONL ingestion,
//! stratified splitting and dataset statistics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("empty input")]
    EmptyInput,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("unknown issue category {0:?}")]
    UnknownCategory(String),
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("{malformed} of {lines} lines in {path} are malformed; is this a review corpus?")]
    Schema {
        path: String,
        lines: usize,
        malformed: usize,
    },
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

/// Review comment intent. `Others` only exists so that it can be parsed and
/// rejected; it is never stored in a [`Corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IssueCategory {
    Refactoring,
    Bugfix,
    Testing,
    Logging,
    Documentation,
    Others,
}

impl IssueCategory {
    /// The five reviewable categories in canonical order.
    pub const ALL: [IssueCategory; 5] = [
        IssueCategory::Refactoring,
        IssueCategory::Bugfix,
        IssueCategory::Testing,
        IssueCategory::Logging,
        IssueCategory::Documentation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IssueCategory::Refactoring => "refactoring",
            IssueCategory::Bugfix => "bugfix",
            IssueCategory::Testing => "testing",
            IssueCategory::Logging => "logging",
            IssueCategory::Documentation => "documentation",
            IssueCategory::Others => "others",
        }
    }

    /// Display label as used in tables ("Refactoring", ...).
    pub fn title(self) -> &'static str {
        match self {
            IssueCategory::Refactoring => "Refactoring",
            IssueCategory::Bugfix => "Bugfix",
            IssueCategory::Testing => "Testing",
            IssueCategory::Logging => "Logging",
            IssueCategory::Documentation => "Documentation",
            IssueCategory::Others => "Others",
        }
    }

    /// Position in canonical order; `None` for `Others`.
    pub fn index(self) -> Option<usize> {
        Self::ALL.iter().position(|&c| c == self)
    }

    pub fn is_others(self) -> bool {
        self == IssueCategory::Others
    }
}

impl fmt::Display for IssueCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IssueCategory {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "refactoring" => Ok(IssueCategory::Refactoring),
            "bugfix" => Ok(IssueCategory::Bugfix),
            "testing" => Ok(IssueCategory::Testing),
            "logging" => Ok(IssueCategory::Logging),
            "documentation" => Ok(IssueCategory::Documentation),
            "others" => Ok(IssueCategory::Others),
            _ => Err(CorpusError::UnknownCategory(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LineKind {
    Added,
    Removed,
    Context,
}

/// One line of a hunk. `content` has the marker stripped; `prefixed` records
/// whether a context line carried the leading space so the raw text can be
/// rebuilt exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffLine {
    pub kind: LineKind,
    pub content: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub prefixed: bool,
}

impl DiffLine {
    fn parse(line: &str) -> Self {
        if let Some(rest) = line.strip_prefix('+') {
            DiffLine { kind: LineKind::Added, content: rest.to_string(), prefixed: true }
        } else if let Some(rest) = line.strip_prefix('-') {
            DiffLine { kind: LineKind::Removed, content: rest.to_string(), prefixed: true }
        } else if let Some(rest) = line.strip_prefix(' ') {
            DiffLine { kind: LineKind::Context, content: rest.to_string(), prefixed: true }
        } else {
            DiffLine { kind: LineKind::Context, content: line.to_string(), prefixed: false }
        }
    }

    /// The line as it appears in the raw hunk, marker included.
    pub fn raw(&self) -> String {
        let marker = match (self.kind, self.prefixed) {
            (LineKind::Added, _) => "+",
            (LineKind::Removed, _) => "-",
            (LineKind::Context, true) => " ",
            (LineKind::Context, false) => "",
        };
        format!("{marker}{}", self.content)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffHunk {
    pub id: String,
    pub raw_text: String,
    pub lines: Vec<DiffLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language_tag: Option<String>,
}

impl DiffHunk {
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        parse_diff_hunk(text)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_language(mut self, lang: Option<String>) -> Self {
        self.language_tag = lang;
        self
    }

    /// Rebuild the raw text from the classified lines.
    pub fn rejoin(&self) -> String {
        self.lines.iter().map(DiffLine::raw).collect::<Vec<_>>().join("\n")
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn count(&self, kind: LineKind) -> usize {
        self.lines.iter().filter(|l| l.kind == kind).count()
    }
}

/// Classify each line of a hunk by its leading marker.
pub fn parse_diff_hunk(text: &str) -> Result<DiffHunk, CorpusError> {
    if text.trim().is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    Ok(DiffHunk {
        id: String::new(),
        raw_text: text.to_string(),
        lines: text.split('\n').map(DiffLine::parse).collect(),
        language_tag: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub diff: DiffHunk,
    pub comment: String,
    pub category: IssueCategory,
    /// `None` until assigned by [`split_corpus`] or read from the file.
    pub split: Option<Split>,
}

impl ReviewRecord {
    pub fn id(&self) -> &str {
        &self.diff.id
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub records: Vec<ReviewRecord>,
    pub dropped_others: usize,
    pub dropped_malformed: usize,
}

impl Corpus {
    /// Build a corpus from already validated records. Records in the
    /// `Others` category, with a blank comment, or with a repeated id are
    /// dropped and counted.
    pub fn from_records(records: impl IntoIterator<Item = ReviewRecord>) -> Self {
        let mut corpus = Corpus::default();
        let mut seen = HashSet::new();
        for record in records {
            if record.category.is_others() {
                corpus.dropped_others += 1;
            } else if record.comment.trim().is_empty() || !seen.insert(record.diff.id.clone()) {
                corpus.dropped_malformed += 1;
            } else {
                corpus.records.push(record);
            }
        }
        corpus
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn by_category(&self, category: IssueCategory) -> impl Iterator<Item = &ReviewRecord> {
        self.records.iter().filter(move |r| r.category == category)
    }

    pub fn count(&self, category: IssueCategory) -> usize {
        self.by_category(category).count()
    }

    pub fn get(&self, id: &str) -> Option<&ReviewRecord> {
        self.records.iter().find(|r| r.diff.id == id)
    }

    /// Records that carry the given split tag.
    pub fn with_split(&self, split: Split) -> Corpus {
        Corpus {
            records: self.records.iter().filter(|r| r.split == Some(split)).cloned().collect(),
            dropped_others: 0,
            dropped_malformed: 0,
        }
    }
}

/// One line of the JSONL corpus schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub diff: String,
    pub comment: String,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl From<&ReviewRecord> for RawRecord {
    fn from(r: &ReviewRecord) -> Self {
        RawRecord {
            id: Some(r.diff.id.clone()),
            diff: r.diff.raw_text.clone(),
            comment: r.comment.clone(),
            category: r.category.name().to_string(),
            lang: r.diff.language_tag.clone(),
            split: r.split,
        }
    }
}

enum LineOutcome {
    Record(ReviewRecord),
    Others,
    Malformed,
}

fn parse_line(line: &str, line_no: usize) -> LineOutcome {
    let Ok(raw) = serde_json::from_str::<RawRecord>(line) else {
        return LineOutcome::Malformed;
    };
    let Ok(category) = raw.category.parse::<IssueCategory>() else {
        return LineOutcome::Malformed;
    };
    if category.is_others() {
        return LineOutcome::Others;
    }
    if raw.comment.trim().is_empty() {
        return LineOutcome::Malformed;
    }
    let Ok(diff) = parse_diff_hunk(&raw.diff) else {
        return LineOutcome::Malformed;
    };
    let id = raw.id.unwrap_or_else(|| line_no.to_string());
    LineOutcome::Record(ReviewRecord {
        diff: diff.with_id(id).with_language(raw.lang),
        comment: raw.comment,
        category,
        split: raw.split,
    })
}

/// Read a JSONL review corpus. `Others` records and malformed lines are
/// dropped and counted; ids default to the 1-based line number.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    read_corpus(reader, &path.display().to_string())
}

pub fn read_corpus(reader: impl BufRead, source: &str) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    let mut seen = HashSet::new();
    let mut lines = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        lines += 1;
        match parse_line(&line, i + 1) {
            LineOutcome::Record(r) if seen.insert(r.diff.id.clone()) => corpus.records.push(r),
            LineOutcome::Record(_) | LineOutcome::Malformed => corpus.dropped_malformed += 1,
            LineOutcome::Others => corpus.dropped_others += 1,
        }
    }
    if corpus.dropped_malformed * 2 > lines {
        return Err(CorpusError::Schema {
            path: source.to_string(),
            lines,
            malformed: corpus.dropped_malformed,
        });
    }
    Ok(corpus)
}

/// Fisher-Yates over `items` driven by `rng`, drawing `j` uniformly from
/// `0..=i` as a `u32` for `i` from the end down to 1.
fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..(i as u32 + 1)) as usize;
        items.swap(i, j);
    }
}

/// Stratified split. Records that already carry a split tag keep it. The
/// rest are grouped by category (canonical order); each group's ids are
/// sorted, shuffled with a ChaCha8 generator seeded once from `seed`, and
/// the first `floor(n * train_fraction)` go to train.
pub fn split_corpus(
    corpus: &Corpus,
    train_fraction: f64,
    seed: u64,
) -> Result<(Corpus, Corpus), CorpusError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(train_fraction));
    }
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }

    let mut assignment: BTreeMap<&str, Split> = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for category in IssueCategory::ALL {
        let mut ids: Vec<&str> = corpus
            .by_category(category)
            .filter(|r| r.split.is_none())
            .map(|r| r.id())
            .collect();
        ids.sort_unstable();
        shuffle(&mut ids, &mut rng);
        let cut = (ids.len() as f64 * train_fraction).floor() as usize;
        for (k, id) in ids.into_iter().enumerate() {
            assignment.insert(id, if k < cut { Split::Train } else { Split::Test });
        }
    }

    let mut train = Corpus::default();
    let mut test = Corpus::default();
    for record in &corpus.records {
        let split = record.split.unwrap_or_else(|| assignment[record.id()]);
        let mut record = record.clone();
        record.split = Some(split);
        match split {
            Split::Train => train.records.push(record),
            Split::Test => test.records.push(record),
        }
    }
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub count: usize,
    pub avg_code_lines: f64,
    pub avg_comment_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_category: BTreeMap<IssueCategory, CategoryStats>,
    pub total: CategoryStats,
}

fn mean_stats<'a>(records: impl Iterator<Item = &'a ReviewRecord>) -> CategoryStats {
    let (mut count, mut lines, mut tokens) = (0usize, 0usize, 0usize);
    for r in records {
        count += 1;
        lines += r.diff.line_count();
        tokens += r.comment.split_whitespace().count();
    }
    if count == 0 {
        return CategoryStats::default();
    }
    CategoryStats {
        count,
        avg_code_lines: lines as f64 / count as f64,
        avg_comment_tokens: tokens as f64 / count as f64,
    }
}

/// Per-category and total counts with mean diff line count and mean
/// whitespace-token count of comments.
pub fn compute_stats(corpus: &Corpus) -> CorpusStats {
    let per_category = IssueCategory::ALL
        .into_iter()
        .map(|c| (c, mean_stats(corpus.by_category(c))))
        .collect();
    CorpusStats { per_category, total: mean_stats(corpus.records.iter()) }
}

impl CorpusStats {
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<14} {:>8} {:>15} {:>18}\n",
            "Category", "Count", "Avg. Code Line", "Avg. Comment Token"
        );
        let rows = self
            .per_category
            .iter()
            .map(|(c, s)| (c.title(), s))
            .chain(std::iter::once(("Total", &self.total)));
        for (name, s) in rows {
            out.push_str(&format!(
                "{:<14} {:>8} {:>15.2} {:>18.2}\n",
                name, s.count, s.avg_code_lines, s.avg_comment_tokens
            ));
        }
        out
    }
}
