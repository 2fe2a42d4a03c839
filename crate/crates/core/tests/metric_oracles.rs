use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use revagent::evalmetrics::{align, bleu4_tokens, meteor_tokens, metric_tokens, rouge_l_tokens};

const VOCAB: [&str; 8] = ["the", "x", "null", "check", "(", ")", ".", "add"];

fn random_tokens(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<String> {
    let len = rng.gen_range(0..=max_len);
    (0..len).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())].to_string()).collect()
}

fn pairs(seed: u64, count: usize, max_len: usize) -> Vec<(Vec<String>, Vec<String>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (random_tokens(&mut rng, max_len), random_tokens(&mut rng, max_len))).collect()
}

fn naive_bleu(c: &[String], r: &[String]) -> f64 {
    if c.is_empty() {
        return 0.0;
    }
    let mut product = 1.0;
    for n in 1..=4 {
        let grams = |t: &[String]| -> Vec<Vec<String>> {
            if t.len() < n {
                return vec![];
            }
            (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
        };
        let cg = grams(c);
        let rg = grams(r);
        let mut seen: Vec<&Vec<String>> = Vec::new();
        let mut matched = 0usize;
        for g in &cg {
            if seen.contains(&g) {
                continue;
            }
            seen.push(g);
            let in_c = cg.iter().filter(|x| *x == g).count();
            let in_r = rg.iter().filter(|x| *x == g).count();
            matched += in_c.min(in_r);
        }
        let p = if matched > 0 {
            matched as f64 / cg.len() as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (cg.len() as f64 + 1.0)
        };
        product *= p;
    }
    let bp = if c.len() < r.len() { (1.0 - r.len() as f64 / c.len() as f64).exp() } else { 1.0 };
    bp * product.powf(0.25) * 100.0
}

fn full_table_lcs(a: &[String], b: &[String]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] { t[i - 1][j - 1] + 1 } else { t[i - 1][j].max(t[i][j - 1]) };
        }
    }
    t[a.len()][b.len()]
}

fn oracle_rouge(c: &[String], r: &[String]) -> f64 {
    let l = full_table_lcs(c, r) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / c.len() as f64;
    let rc = l / r.len() as f64;
    200.0 * p * rc / (p + rc)
}

/// Every injective partial matching of equal tokens, as (matches, chunks).
fn all_alignments(c: &[String], r: &[String]) -> Vec<(usize, usize)> {
    fn go(i: usize, c: &[String], r: &[String], used: &mut Vec<bool>, pairs: &mut Vec<(usize, usize)>, out: &mut Vec<(usize, usize)>) {
        if i == c.len() {
            let chunks = (0..pairs.len())
                .filter(|&k| k == 0 || !(pairs[k].0 == pairs[k - 1].0 + 1 && pairs[k].1 == pairs[k - 1].1 + 1))
                .count();
            out.push((pairs.len(), chunks));
            return;
        }
        go(i + 1, c, r, used, pairs, out);
        for j in 0..r.len() {
            if !used[j] && r[j] == c[i] {
                used[j] = true;
                pairs.push((i, j));
                go(i + 1, c, r, used, pairs, out);
                pairs.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(0, c, r, &mut vec![false; r.len()], &mut Vec::new(), &mut out);
    out
}

fn oracle_meteor(c: &[String], r: &[String]) -> (usize, usize, f64) {
    let all = all_alignments(c, r);
    let m = all.iter().map(|a| a.0).max().unwrap();
    let chunks = all.iter().filter(|a| a.0 == m).map(|a| a.1).min().unwrap();
    if m == 0 {
        return (0, 0, 0.0);
    }
    let p = m as f64 / c.len() as f64;
    let rc = m as f64 / r.len() as f64;
    let f = p * rc / (0.9 * p + 0.1 * rc);
    let frag = chunks as f64 / m as f64;
    (m, chunks, 100.0 * f * (1.0 - 0.5 * frag * frag * frag))
}

#[test]
fn bleu_matches_naive_enumeration() {
    for (c, r) in pairs(11, 300, 20) {
        let (got, want) = (bleu4_tokens(&c, &r), naive_bleu(&c, &r));
        assert!((got - want).abs() <= 1e-9, "{c:?} / {r:?}: {got} vs {want}");
    }
}

#[test]
fn rouge_matches_full_table_dp() {
    for (c, r) in pairs(12, 300, 25) {
        let (got, want) = (rouge_l_tokens(&c, &r), oracle_rouge(&c, &r));
        assert!((got - want).abs() <= 1e-9, "{c:?} / {r:?}: {got} vs {want}");
    }
}

#[test]
fn meteor_matches_exhaustive_alignment() {
    for (c, r) in pairs(13, 300, 8) {
        let (m, chunks, want) = oracle_meteor(&c, &r);
        let a = align(&c, &r);
        assert!(a.exact);
        assert_eq!((a.matches, a.chunks), (m, chunks), "{c:?} / {r:?}");
        let got = meteor_tokens(&c, &r);
        assert!((got - want).abs() <= 1e-9, "{c:?} / {r:?}: {got} vs {want}");
    }
}

#[test]
fn meteor_on_long_repetitive_text_terminates() {
    let c = metric_tokens(&"the value of the field is set to the value of the other field . ".repeat(6));
    let r = metric_tokens(&"set the field to the value of the other field , not the value . ".repeat(6));
    let start = std::time::Instant::now();
    let score = meteor_tokens(&c, &r);
    assert!((0.0..=100.0).contains(&score));
    assert!(start.elapsed().as_secs() < 10);
}

proptest! {
    #[test]
    fn scores_are_bounded(c in proptest::collection::vec(0usize..8, 0..30), r in proptest::collection::vec(0usize..8, 1..30)) {
        let c: Vec<String> = c.into_iter().map(|i| VOCAB[i].to_string()).collect();
        let r: Vec<String> = r.into_iter().map(|i| VOCAB[i].to_string()).collect();
        for s in [bleu4_tokens(&c, &r), rouge_l_tokens(&c, &r), meteor_tokens(&c, &r)] {
            prop_assert!((0.0..=100.0).contains(&s));
        }
    }

    #[test]
    fn identical_strings_hit_the_ceiling(words in proptest::collection::vec("[a-z]{1,6}", 1..20)) {
        let text = words.join(" ");
        prop_assert_eq!(revagent::evalmetrics::bleu4(&text, &text), 100.0);
        prop_assert_eq!(revagent::evalmetrics::rouge_l(&text, &text), 100.0);
        let n = metric_tokens(&text).len() as f64;
        let expected = 100.0 * (1.0 - 0.5 / (n * n * n));
        prop_assert!((revagent::evalmetrics::meteor(&text, &text) - expected).abs() < 1e-9);
    }

    #[test]
    fn rouge_f1_is_symmetric(c in proptest::collection::vec(0usize..8, 1..20), r in proptest::collection::vec(0usize..8, 1..20)) {
        let c: Vec<String> = c.into_iter().map(|i| VOCAB[i].to_string()).collect();
        let r: Vec<String> = r.into_iter().map(|i| VOCAB[i].to_string()).collect();
        prop_assert!((rouge_l_tokens(&c, &r) - rouge_l_tokens(&r, &c)).abs() < 1e-9);
    }
}
