#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Brute-force Okapi BM25 over pre-tokenised documents: recounts every
/// document for every query, no postings.
pub struct ScanBm25<'a> {
    pub docs: Vec<(&'a str, Vec<String>)>,
    pub k1: f64,
    pub b: f64,
}

impl<'a> ScanBm25<'a> {
    pub fn new(docs: Vec<(&'a str, Vec<String>)>) -> Self {
        ScanBm25 { docs, k1: 1.2, b: 0.75 }
    }

    /// Score of every document, recounting term and document frequencies
    /// directly from the token lists.
    pub fn scores(&self, query: &[String]) -> Vec<f64> {
        let n = self.docs.len() as f64;
        let avgdl = self.docs.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;
        let mut terms: Vec<&String> = query.iter().collect();
        terms.sort();
        terms.dedup();
        let dfs: Vec<f64> =
            terms.iter().map(|term| self.docs.iter().filter(|(_, t)| t.contains(term)).count() as f64).collect();
        self.docs
            .iter()
            .map(|(_, tokens)| {
                let mut total = 0.0;
                for (term, df) in terms.iter().zip(&dfs) {
                    let tf = tokens.iter().filter(|t| t == term).count() as f64;
                    if tf == 0.0 {
                        continue;
                    }
                    let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                    let denom = tf + self.k1 * (1.0 - self.b + self.b * tokens.len() as f64 / avgdl);
                    total += idf * tf * (self.k1 + 1.0) / denom;
                }
                total
            })
            .collect()
    }

    /// Highest-scoring document among those passing `keep`; equal scores go
    /// to the smallest id. `None` when every score is zero.
    pub fn top1(&self, query: &[String], keep: impl Fn(&str) -> bool) -> Option<(&'a str, f64)> {
        let mut best: Option<(&str, f64)> = None;
        for ((id, _), s) in self.docs.iter().zip(self.scores(query)) {
            if !keep(id) || s <= 0.0 {
                continue;
            }
            best = match best {
                None => Some((id, s)),
                Some((bid, bs)) if s > bs + 1e-12 || ((s - bs).abs() <= 1e-12 && *id < bid) => Some((id, s)),
                keep_best => keep_best,
            };
        }
        best
    }
}

/// Group values by key, keeping insertion order inside each group.
pub fn group_by<K: Ord, V>(items: impl IntoIterator<Item = (K, V)>) -> BTreeMap<K, Vec<V>> {
    let mut out: BTreeMap<K, Vec<V>> = BTreeMap::new();
    for (k, v) in items {
        out.entry(k).or_default().push(v);
    }
    out
}
