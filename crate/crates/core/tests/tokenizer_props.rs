use proptest::prelude::*;
use regex::Regex;
use revagent::retrieval::{tokenize_code, CodeTokenizerConfig};

/// Independent statement of the splitting rules for ASCII input.
fn regex_tokens(text: &str, max_len: usize) -> Vec<String> {
    let piece = Regex::new(r"[A-Z]*[a-z]+|[A-Z]+|[0-9]+").unwrap();
    // A word led by an acronym gives up the acronym's last capital.
    let acronym = Regex::new(r"^([A-Z]+)([A-Z][a-z]+)$").unwrap();
    let mut out = Vec::new();
    for m in piece.find_iter(text) {
        match acronym.captures(m.as_str()) {
            Some(c) => out.extend([c[1].to_string(), c[2].to_string()]),
            None => out.push(m.as_str().to_string()),
        }
    }
    out.into_iter().map(|t| t.to_lowercase()).filter(|t| t.len() <= max_len).collect()
}

#[test]
fn examples() {
    let cfg = CodeTokenizerConfig::default();
    assert_eq!(tokenize_code("parseJSON(userId2x)", &cfg), ["parse", "json", "user", "id", "2", "x"]);
    assert_eq!(tokenize_code("HTTPServer_conn->max_retries", &cfg), ["http", "server", "conn", "max", "retries"]);
    assert!(tokenize_code("+-*/ {}", &cfg).is_empty());
}

proptest! {
    #[test]
    fn matches_regex_oracle(text in "[A-Za-z0-9_ .(){}+\\-=<>]{0,80}") {
        let cfg = CodeTokenizerConfig::default();
        prop_assert_eq!(tokenize_code(&text, &cfg), regex_tokens(&text, cfg.max_token_len));
    }

    #[test]
    fn long_tokens_are_dropped(n in 1usize..100) {
        let cfg = CodeTokenizerConfig { max_token_len: 10, ..Default::default() };
        let text = format!("keep {}", "z".repeat(n));
        let tokens = tokenize_code(&text, &cfg);
        prop_assert_eq!(tokens.len(), if n <= 10 { 2 } else { 1 });
    }

    #[test]
    fn tokens_are_lowercase_without_separators(text in "\\PC{0,60}") {
        for t in tokenize_code(&text, &CodeTokenizerConfig::default()) {
            prop_assert!(!t.is_empty());
            prop_assert!(!t.chars().any(|c| c.is_whitespace() || c.is_ascii_punctuation()));
            prop_assert_eq!(t.to_lowercase(), t.clone());
        }
    }
}
