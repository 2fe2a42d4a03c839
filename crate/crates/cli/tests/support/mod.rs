//! Brute-force reference implementations used by the acceptance suite.

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Every n-gram listed position by position, clipped by counting matches
/// against a consumable copy of the reference list.
pub fn naive_bleu(c: &[String], r: &[String]) -> f64 {
    if c.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4usize {
        let grams = |t: &[String]| -> Vec<Vec<String>> {
            if t.len() < n {
                return Vec::new();
            }
            (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
        };
        let cand = grams(c);
        let mut pool = grams(r);
        let mut matched = 0;
        for g in &cand {
            if let Some(pos) = pool.iter().position(|x| x == g) {
                pool.swap_remove(pos);
                matched += 1;
            }
        }
        let p = if matched > 0 {
            matched as f64 / cand.len() as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (cand.len() as f64 + 1.0)
        };
        log_sum += 0.25 * p.ln();
    }
    let bp = if c.len() < r.len() { (1.0 - r.len() as f64 / c.len() as f64).exp() } else { 1.0 };
    100.0 * bp * log_sum.exp()
}

/// Full (n+1)x(m+1) LCS table.
pub fn lcs_table(a: &[String], b: &[String]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] { t[i - 1][j - 1] + 1 } else { t[i - 1][j].max(t[i][j - 1]) };
        }
    }
    t[a.len()][b.len()]
}

pub fn oracle_rouge(c: &[String], r: &[String]) -> f64 {
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let l = lcs_table(c, r) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, rc) = (l / c.len() as f64, l / r.len() as f64);
    200.0 * p * rc / (p + rc)
}

/// Enumerate every one-to-one matching of equal tokens; keep the largest,
/// then the one with fewest chunks.
pub fn oracle_meteor(c: &[String], r: &[String]) -> f64 {
    fn go(i: usize, c: &[String], r: &[String], used: &mut [bool], pairs: &mut Vec<(usize, usize)>, best: &mut (usize, usize)) {
        if i == c.len() {
            let m = pairs.len();
            let chunks = (0..m)
                .filter(|&k| k == 0 || pairs[k].0 != pairs[k - 1].0 + 1 || pairs[k].1 != pairs[k - 1].1 + 1)
                .count();
            if m > best.0 || (m == best.0 && chunks < best.1) {
                *best = (m, chunks);
            }
            return;
        }
        go(i + 1, c, r, used, pairs, best);
        for j in 0..r.len() {
            if !used[j] && r[j] == c[i] {
                used[j] = true;
                pairs.push((i, j));
                go(i + 1, c, r, used, pairs, best);
                pairs.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, 0);
    go(0, c, r, &mut vec![false; r.len()], &mut Vec::new(), &mut best);
    let (m, chunks) = best;
    if m == 0 {
        return 0.0;
    }
    let (p, rc) = (m as f64 / c.len() as f64, m as f64 / r.len() as f64);
    let f = p * rc / (0.9 * p + 0.1 * rc);
    100.0 * f * (1.0 - 0.5 * (chunks as f64 / m as f64).powi(3))
}

/// Okapi BM25 recomputed from raw token lists on every query.
pub struct ScanBm25 {
    pub docs: Vec<(String, Vec<String>)>,
}

impl ScanBm25 {
    pub fn scores(&self, query: &[String]) -> Vec<f64> {
        let (k1, b) = (1.2, 0.75);
        let n = self.docs.len() as f64;
        let avgdl = self.docs.iter().map(|(_, t)| t.len()).sum::<usize>() as f64 / n;
        let mut terms: Vec<&String> = query.iter().collect();
        terms.sort();
        terms.dedup();
        let mut df: HashMap<&String, f64> = HashMap::new();
        for t in &terms {
            df.insert(t, self.docs.iter().filter(|(_, d)| d.contains(t)).count() as f64);
        }
        self.docs
            .iter()
            .map(|(_, d)| {
                terms
                    .iter()
                    .map(|t| {
                        let tf = d.iter().filter(|x| x == t).count() as f64;
                        if tf == 0.0 {
                            return 0.0;
                        }
                        let idf = (1.0 + (n - df[t] + 0.5) / (df[t] + 0.5)).ln();
                        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avgdl))
                    })
                    .sum()
            })
            .collect()
    }

    /// Best positive score among documents accepted by `keep`, smallest id
    /// on ties.
    pub fn top1(&self, query: &[String], keep: impl Fn(&str) -> bool) -> Option<(String, f64)> {
        let mut best: Option<(String, f64)> = None;
        for ((id, _), s) in self.docs.iter().zip(self.scores(query)) {
            if !keep(id) || s <= 0.0 {
                continue;
            }
            let better = match &best {
                None => true,
                Some((bid, bs)) => s > bs + 1e-12 || ((s - bs).abs() <= 1e-12 && id < bid),
            };
            if better {
                best = Some((id.clone(), s));
            }
        }
        best
    }
}
