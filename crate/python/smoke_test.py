"""Smoke test for the revagent_py extension module.

Build and install it first, e.g. `maturin develop -m crates/python/Cargo.toml`,
then run `python python/smoke_test.py` from the repository root.
"""

import os
import sys

import revagent_py as ra

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIXTURES = os.path.join(ROOT, "crates", "cli", "tests", "fixtures")


def main():
    corpus = ra.Corpus.load(os.path.join(FIXTURES, "stats20.jsonl"))
    assert len(corpus) == 20
    stats = corpus.stats()
    assert stats["total"]["count"] == 20
    assert stats["per_category"]["refactoring"]["avg_comment_tokens"] == 10.25

    assert ra.tokenize_code("parseHTTPHeader(x_1)") == ["parse", "http", "header", "x", "1"]

    big = ra.Corpus.load(os.path.join(FIXTURES, "corpus50.jsonl"))
    docs = [(i, big.get(i)[0]) for i in big.ids()]
    index = ra.Bm25Index(docs)
    hits = index.query(big.get("bug00")[0], 3)
    assert hits[0][0] == "bug00" and hits[0][2] == 1

    diff = big.get("bug00")[0]
    prompt = ra.commentator_prompt("bugfix", diff)
    assert "the diff hunk needs to be revised to fix one or more bugs" in prompt

    assert ra.bleu4("add a null check", "add a null check") == 100.0
    assert ra.meteor("rename this local variable", "rename this local variable") == 99.21875

    report = ra.evaluate([
        {"diff_id": "a", "generated_comment": "x", "reference_comment": "x", "predicted_category": "bugfix", "gold_category": "bugfix"},
        {"diff_id": "b", "generated_comment": "y", "reference_comment": "z", "predicted_category": "testing", "gold_category": "logging"},
    ])
    assert report["aggregate"]["pred_acc"] == 50.0

    out = ra.review(diff, os.path.join(FIXTURES, "mock.toml"), diff_id="bug00")
    assert out["verdict"]["category"] == "bugfix", out["verdict"]
    assert len(out["candidates"]) == 5
    sfa = ra.review(diff, os.path.join(FIXTURES, "mock.toml"), mode="sfa", diff_id="bug00")
    assert {c["model"] for c in sfa["candidates"]} == {"fusion-base"}

    try:
        ra.Corpus.load("/nonexistent.jsonl")
    except ra.RevAgentError:
        pass
    else:
        raise AssertionError("missing file did not raise")

    print("smoke test passed")


if __name__ == "__main__":
    sys.exit(main())
