mod common;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use common::{fixture, ScanBm25};
use revagent::backend::{BackendError, ChatBackend, GenerationRequest, GenerationResult, MockBackend, MockEntry};
use revagent::corpus::{load_corpus, IssueCategory};
use revagent::pipeline::{Agent, CandidateSource, PipelineConfig};
use revagent::prompts::DirectiveTable;
use revagent::retrieval::{tokenize_code, CodeTokenizerConfig, DEFAULT_B, DEFAULT_K1};
use revagent::trainset::{build_commentator_corpora, build_critic_corpus, build_critic_examples, CriticCorpusMode};

fn ccr_mode() -> CriticCorpusMode {
    CriticCorpusMode::Ccr { tokenizer: CodeTokenizerConfig::default(), k1: DEFAULT_K1, b: DEFAULT_B }
}

#[test]
fn ccr_examples_satisfy_invariants_and_match_oracle() {
    let train = load_corpus(fixture("corpus50.jsonl")).unwrap();
    assert_eq!(train.len(), 50);
    let (examples, report) = build_critic_examples(&train, &ccr_mode()).unwrap();
    assert_eq!(examples.len(), 50);
    assert_eq!(report.instances, 50);

    let cfg = CodeTokenizerConfig::default();
    let tokens: BTreeMap<&str, Vec<String>> =
        train.records.iter().map(|r| (r.id(), tokenize_code(&r.diff.raw_text, &cfg))).collect();
    let oracles: BTreeMap<IssueCategory, ScanBm25> = IssueCategory::ALL
        .iter()
        .map(|&c| {
            let docs = train.by_category(c).map(|r| (r.id(), tokens[r.id()].clone())).collect();
            (c, ScanBm25::new(docs))
        })
        .collect();

    let mut expected_fallbacks = 0;
    for (record, example) in train.records.iter().zip(&examples) {
        assert_eq!(example.record_id, record.id());
        let cats: Vec<IssueCategory> = example.candidates.iter().map(|c| c.category).collect();
        assert_eq!(cats, IssueCategory::ALL);
        let others: Vec<_> = example.candidates.iter().filter(|c| c.category != record.category).collect();
        assert_eq!(others.len(), 4);
        let gold = &example.candidates[record.category.index().unwrap()];
        assert_eq!(gold.text, record.comment);

        for candidate in others {
            assert_eq!(candidate.source, CandidateSource::Retrieved);
            let doc = &example.retrieved_from[&candidate.category];
            assert_ne!(doc, record.id(), "self-exclusion");
            let want_id = match oracles[&candidate.category].top1(&tokens[record.id()], |id| id != record.id()) {
                Some((id, _)) => id,
                None => {
                    // No shared term: the category's longest comment, smallest id on ties.
                    expected_fallbacks += 1;
                    train
                        .by_category(candidate.category)
                        .min_by_key(|r| (std::cmp::Reverse(r.comment.chars().count()), r.id().to_string()))
                        .unwrap()
                        .id()
                }
            };
            assert_eq!(doc, want_id, "record {} slot {}", record.id(), candidate.category);
            assert_eq!(candidate.text, train.get(want_id).unwrap().comment);
        }
    }
    assert!(expected_fallbacks > 0, "fixture should exercise the no-hit path");
    assert_eq!(report.ccr_fallbacks, expected_fallbacks);
    let slots = report.histogram.values().map(|s| s.total()).sum::<usize>();
    assert_eq!(slots, 250);
}

#[test]
fn commentator_corpora_partition_the_fixture() {
    let train = load_corpus(fixture("corpus50.jsonl")).unwrap();
    let corpora = build_commentator_corpora(&train);
    assert_eq!(corpora.values().map(Vec::len).sum::<usize>(), train.len());
    for c in IssueCategory::ALL {
        let mut got: Vec<&str> = corpora[&c].iter().map(|i| i.output.as_str()).collect();
        let mut want: Vec<&str> = train.by_category(c).map(|r| r.comment.as_str()).collect();
        got.sort();
        want.sort();
        assert_eq!(got, want, "{c}");
        let clause = DirectiveTable::clause(c).unwrap();
        assert!(corpora[&c].iter().all(|i| i.instruction.contains(&clause)));
        for (instance, record) in corpora[&c].iter().zip(train.by_category(c)) {
            assert!(instance.input.contains(&record.diff.raw_text));
        }
    }
}

#[test]
fn critic_instances_name_the_gold_pair() {
    let train = load_corpus(fixture("corpus50.jsonl")).unwrap();
    let (instances, _) = build_critic_corpus(&train, &ccr_mode()).unwrap();
    for (instance, record) in instances.iter().zip(&train.records) {
        assert_eq!(
            instance.output,
            format!("Selected Category: {}\nReview Comment: {}", record.category.name(), record.comment)
        );
        for c in IssueCategory::ALL {
            assert!(instance.input.contains(&format!("[{}]", c.name())));
        }
    }
}

/// Counts calls and answers every prompt with a fixed comment.
struct Counting {
    inner: MockBackend,
    calls: AtomicUsize,
}

impl ChatBackend for Counting {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

#[test]
fn generated_mode_makes_four_commentator_calls_per_record() {
    let train = load_corpus(fixture("corpus50.jsonl")).unwrap();
    let backends: Vec<Arc<Counting>> = (0..5)
        .map(|i| {
            Arc::new(Counting {
                inner: MockBackend::new(vec![MockEntry::new("", format!("Review Comment: generated {i}"))]),
                calls: AtomicUsize::new(0),
            })
        })
        .collect();
    let agents = backends.iter().map(|b| Agent::new(b.clone(), "base")).collect();
    let critic = Agent::new(Arc::new(MockBackend::constant("unused")), "critic");
    let mode = CriticCorpusMode::Generated(PipelineConfig::new(agents, critic));
    let (examples, report) = build_critic_examples(&train, &mode).unwrap();

    let total: usize = backends.iter().map(|b| b.calls.load(Ordering::SeqCst)).sum();
    assert_eq!(total, 4 * train.len());
    for (i, c) in IssueCategory::ALL.iter().enumerate() {
        assert_eq!(backends[i].calls.load(Ordering::SeqCst), train.len() - train.count(*c));
    }
    for (record, example) in train.records.iter().zip(&examples) {
        for cand in example.candidates.iter().filter(|c| c.category != record.category) {
            assert_eq!(cand.source, CandidateSource::Generated);
            assert_eq!(cand.text, format!("generated {}", cand.category.index().unwrap()));
        }
    }
    assert_eq!(report.histogram.values().map(|s| s.generated).sum::<usize>(), 200);
}
