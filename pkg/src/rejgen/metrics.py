"""Summary metrics: ROUGE-1 F1, novel n-grams, extractive-fragment coverage,
oracle factuality rates, and the five-way rejection-alignment analysis."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .corpus import oracle_judge
from .vocab import BOS, EOS

ALIGNMENT_CATEGORIES = (
    "same_entity",
    "different_unsupported",
    "different_supported",
    "remove_entity",
    "rejection",
)


class MetricsError(ValueError):
    pass


@dataclass
class MetricsReport:
    sentence_factuality_rate: float
    entity_hallucination_rate: float
    novel_unigram_pct: float
    novel_bigram_pct: float
    mean_coverage: float
    rouge1_f: float
    n: int

    def to_dict(self):
        return dict(self.__dict__)

    def save_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    def save_csv(self, path, extra=None):
        row = {**(extra or {}), **self.to_dict()}
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(row))
            w.writeheader()
            w.writerow(row)


# -- text-overlap metrics --------------------------------------------------


def rouge1_f(reference, hypothesis):
    """Unigram-overlap F1 with clipped counts."""
    if not len(reference) or not len(hypothesis):
        raise MetricsError("rouge1_f requires non-empty sequences")
    ref_counts = Counter(reference)
    hyp_counts = Counter(hypothesis)
    overlap = sum(min(ref_counts[t], c) for t, c in hyp_counts.items())
    if overlap == 0:
        return 0.0
    p = overlap / len(hypothesis)
    r = overlap / len(reference)
    return 2 * p * r / (p + r)


def _ngrams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def novel_ngram_pct(source, summary, n):
    """Fraction of summary n-grams absent from the source (type membership)."""
    if len(summary) < n:
        raise MetricsError(f"summary shorter than n={n}")
    src = set(_ngrams(list(source), n))
    grams = _ngrams(list(summary), n)
    return sum(1 for g in grams if g not in src) / len(grams)


def coverage(source, summary):
    """Fraction of summary tokens inside greedy extractive fragments.

    Standard longest-match scan: at each summary position take the longest
    contiguous match against the source (earliest source position on ties),
    count its tokens, and jump past it; unmatched tokens advance by one.
    """
    source = list(source)
    summary = list(summary)
    if not summary:
        raise MetricsError("coverage requires a non-empty summary")
    covered = 0
    i = 0
    while i < len(summary):
        best = 0
        for j in range(len(source)):
            if source[j] != summary[i]:
                continue
            length = 0
            while (
                i + length < len(summary)
                and j + length < len(source)
                and source[j + length] == summary[i + length]
            ):
                length += 1
            if length > best:
                best = length
        if best > 0:
            covered += best
            i += best
        else:
            i += 1
    return covered / len(summary)


# -- aggregate reports -----------------------------------------------------


def strip_markers(tokens):
    return [t for t in tokens if t not in (BOS, EOS)]


def factuality_report(decodes, examples, vocab, references=None):
    """Aggregate oracle verdicts and abstractiveness metrics over one run.

    decodes: dict example_id -> token id list (BOS/EOS tolerated);
    examples: the split decoded from; references: optional clean split to
    score ROUGE against (defaults to `examples`' own references).
    """
    if not decodes:
        raise MetricsError("factuality_report over zero decodes")
    by_id = {ex.id: ex for ex in examples}
    ref_by_id = {ex.id: ex for ex in (references or examples)}
    faithful = 0
    n_entities = 0
    n_unsupported = 0
    unis, bis, covs, rouges = [], [], [], []
    for ex_id, tokens in decodes.items():
        if ex_id not in by_id:
            raise MetricsError(f"decode id {ex_id!r} not present in corpus split")
        ex = by_id[ex_id]
        summary = strip_markers(tokens)
        verdict = oracle_judge(summary, ex, vocab)
        faithful += verdict["sentence_verdict"] == "faithful"
        n_entities += len(verdict["entities"])
        n_unsupported += verdict["n_unsupported"]
        if summary:
            unis.append(novel_ngram_pct(ex.source, summary, 1))
            if len(summary) >= 2:
                bis.append(novel_ngram_pct(ex.source, summary, 2))
            covs.append(coverage(ex.source, summary))
            rouges.append(rouge1_f(ref_by_id[ex_id].reference, summary))
    n = len(decodes)
    return MetricsReport(
        sentence_factuality_rate=faithful / n,
        entity_hallucination_rate=(n_unsupported / n_entities) if n_entities else 0.0,
        novel_unigram_pct=float(np.mean(unis)) if unis else 0.0,
        novel_bigram_pct=float(np.mean(bis)) if bis else 0.0,
        mean_coverage=float(np.mean(covs)) if covs else 0.0,
        rouge1_f=float(np.mean(rouges)) if rouges else 0.0,
        n=n,
    )


@dataclass
class AlignmentDistribution:
    """Counts over the five output categories, split by gold probe label."""

    counts: dict = field(default_factory=dict)

    def rate(self, label, category):
        total = sum(self.counts[label].values())
        return self.counts[label][category] / total if total else 0.0


def alignment_analysis(model, probes, examples, vocab):
    """Continue each probe context one step in diagnostic mode and classify.

    Categories: REJ argmax -> rejection; the reference's own span token ->
    same_entity; another lexicon token, absent from source ->
    different_unsupported, present -> different_supported; any non-lexicon
    token -> remove_entity.
    """
    by_id = {ex.id: ex for ex in examples}
    counts = {
        "factual_entity": {c: 0 for c in ALIGNMENT_CATEGORIES},
        "nonfactual_entity": {c: 0 for c in ALIGNMENT_CATEGORIES},
    }
    rej_id = vocab.rej_id
    for probe in probes:
        ex = by_id[probe.example_id]
        memory = model.encode(ex.source)
        dist = model.decode_step(memory, [BOS] + list(probe.context), example_id=ex.id)
        top = int(np.argmax(dist.probs))
        if top == rej_id:
            cat = "rejection"
        elif top == probe.span_token:
            cat = "same_entity"
        elif vocab.is_entity(top):
            cat = "different_supported" if top in set(ex.source) else "different_unsupported"
        else:
            cat = "remove_entity"
        counts[probe.gold_label][cat] += 1
    return AlignmentDistribution(counts=counts)
