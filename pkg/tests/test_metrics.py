from collections import Counter

import numpy as np
import pytest

from rejgen.corpus import GenConfig, generate
from rejgen.metrics import (
    MetricsError,
    coverage,
    factuality_report,
    novel_ngram_pct,
    rouge1_f,
    strip_markers,
)
from rejgen.vocab import BOS, EOS


# -- frozen hand values ----------------------------------------------------


def test_rouge1_hand_values():
    assert rouge1_f(["a", "b", "c"], ["a", "b", "c"]) == 1.0
    assert rouge1_f(["a", "b"], ["c", "d"]) == 0.0
    # ref [a b c d], hyp [a b x]: overlap 2, p = 2/3, r = 1/2, f = 4/7
    assert abs(rouge1_f(list("abcd"), list("abx")) - 4 / 7) < 1e-12
    # clipping: hyp repeats 'a' three times against one ref 'a'
    assert abs(rouge1_f(["a", "b"], ["a", "a", "a"]) - 0.4) < 1e-12


def test_rouge1_empty_error():
    with pytest.raises(MetricsError):
        rouge1_f([], ["a"])


def test_novel_ngram_hand_values():
    src = ["the", "cat", "sat"]
    assert novel_ngram_pct(src, ["the", "cat"], 1) == 0.0
    assert novel_ngram_pct(src, ["the", "dog"], 1) == 0.5
    # bigrams: "cat the" absent from source even though both unigrams occur
    assert novel_ngram_pct(src, ["cat", "the"], 2) == 1.0
    with pytest.raises(MetricsError):
        novel_ngram_pct(src, ["a"], 2)


def test_coverage_hand_values():
    src = ["a", "b", "c", "d"]
    assert coverage(src, ["a", "b", "c", "d"]) == 1.0
    assert coverage(src, ["x", "y"]) == 0.0
    # fragment [a b] + novel x + fragment [d] -> 3 of 4 covered
    assert coverage(src, ["a", "b", "x", "d"]) == 0.75
    with pytest.raises(MetricsError):
        coverage(src, [])


def test_coverage_prefers_longest_match():
    # greedy scan must take the longer match [b c] over the single [b]
    src = ["b", "x", "b", "c"]
    assert coverage(src, ["b", "c"]) == 1.0


# -- brute-force recount oracles -------------------------------------------


def brute_rouge(ref, hyp):
    overlap = sum((Counter(ref) & Counter(hyp)).values())
    if overlap == 0:
        return 0.0
    p, r = overlap / len(hyp), overlap / len(ref)
    return 2 * p * r / (p + r)


def brute_novel(src, summ, n):
    grams = [tuple(summ[i : i + n]) for i in range(len(summ) - n + 1)]
    srcg = {tuple(src[i : i + n]) for i in range(len(src) - n + 1)}
    return sum(g not in srcg for g in grams) / len(grams)


def brute_coverage(src, summ):
    covered = i = 0
    while i < len(summ):
        best = 0
        for j in range(len(src)):
            ln = 0
            while (i + ln < len(summ) and j + ln < len(src)
                   and src[j + ln] == summ[i + ln]):
                ln += 1
            best = max(best, ln)
        covered += best
        i += max(best, 1)
    return covered / len(summ)


def test_metrics_match_brute_force(rng):
    for _ in range(100):
        src = list(rng.integers(0, 12, size=rng.integers(5, 30)))
        summ = list(rng.integers(0, 12, size=rng.integers(2, 15)))
        assert abs(rouge1_f(src, summ) - brute_rouge(src, summ)) < 1e-12
        assert novel_ngram_pct(src, summ, 1) == brute_novel(src, summ, 1)
        assert novel_ngram_pct(src, summ, 2) == brute_novel(src, summ, 2)
        assert abs(coverage(src, summ) - brute_coverage(src, summ)) < 1e-12


# -- aggregate report ------------------------------------------------------


@pytest.fixture(scope="module")
def small():
    return generate(GenConfig(n_train=10, n_valid=10, n_test=40, seed=5))


def test_strip_markers():
    assert strip_markers([BOS, 7, 8, EOS]) == [7, 8]


def test_factuality_report_reference_decodes(small):
    """Decoding the clean references scores perfectly factual."""
    decodes = {ex.id: list(ex.reference) for ex in small.test_clean}
    rep = factuality_report(decodes, small.test, small.vocab,
                            references=small.test_clean)
    assert rep.sentence_factuality_rate == 1.0
    assert rep.entity_hallucination_rate == 0.0
    assert rep.rouge1_f == 1.0
    assert rep.n == len(small.test)


def test_factuality_report_noisy_references(small):
    """Replaying the noisy references scores exactly the injected noise."""
    decodes = {ex.id: list(ex.reference) for ex in small.test}
    rep = factuality_report(decodes, small.test, small.vocab)
    expect_faithful = sum(1 for ex in small.test if not ex.noise_spans)
    assert rep.sentence_factuality_rate == expect_faithful / len(small.test)
    n_ent = sum(len(ex.entity_spans) for ex in small.test)
    n_noise = sum(len(ex.noise_spans) for ex in small.test)
    assert abs(rep.entity_hallucination_rate - n_noise / n_ent) < 1e-12


def test_factuality_report_unknown_id(small):
    with pytest.raises(MetricsError):
        factuality_report({"nope": [3]}, small.test, small.vocab)


def test_factuality_report_empty(small):
    with pytest.raises(MetricsError):
        factuality_report({}, small.test, small.vocab)


def test_report_serialization(tmp_path, small):
    decodes = {ex.id: list(ex.reference) for ex in small.test}
    rep = factuality_report(decodes, small.test, small.vocab)
    rep.save_json(tmp_path / "r.json")
    rep.save_csv(tmp_path / "r.csv", extra={"tag": "x"})
    import csv
    import json

    assert json.loads((tmp_path / "r.json").read_text()) == rep.to_dict()
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert len(rows) == 1 and rows[0]["tag"] == "x"
    assert float(rows[0]["rouge1_f"]) == rep.rouge1_f
