"""Templated pseudo-news corpus with exactly-labeled injected noise.

Each example is a short multi-sentence "article" about an organization
receiving money, plus a one-sentence reference mentioning 1-3 of the
article's entities. Noise replaces a reference entity with a same-lexicon
value that never occurs in the source, so supportedness is exactly
decidable by token-set membership (the oracle).

Noise is not spread evenly: the money slot is "risky" (noise concentrates
there, at a rate context-identifiable from the preceding words), while
org/date/city slots are nearly clean. A scale factor is solved so the
realized noise fraction over all entity slots matches the configured rate.
The two template families give the risky slot two entropy tiers: the
"award" family corrupts with any out-of-source money value, the "raise"
family with a small per-value distractor set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .vocab import BOS, EOS, Vocabulary


class CorpusError(ValueError):
    pass


# -- lexicons --------------------------------------------------------------

PERSONS = [
    "alvarez", "becker", "chen", "dalton", "eriksen", "farouk", "gupta",
    "hansen", "ibrahim", "jansen", "kowalski", "larsson", "meyer", "novak",
    "okafor", "petrov", "quinn", "rossi", "suzuki", "tanaka", "ueda",
    "vargas", "weber", "xu", "yamada", "zhang", "oconnor", "dubois",
    "fischer", "moreau",
]
ORGS = [
    "acme-corp", "nordbank", "solaris-group", "veritas-labs", "bluepeak",
    "crestline", "deltaworks", "eastgate", "fernhill", "graniteco",
    "harborview", "ironwood", "jadeline", "kestrel-fund", "lumentech",
    "meridian-trust", "northfield", "oakbridge", "pinnacle-org", "quarry-inc",
    "riverstone", "summitpoint", "tidewater", "unioncrest", "vantage-co",
    "westbrook", "yellowstone-ltd", "zenith-group", "ashford", "brookside",
]
MONIES = [f"£{k}m" for k in range(1, 41)]
DATES = [
    f"{m}-{d}"
    for m in ("jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct")
    for d in (3, 14, 27)
]
CITIES = [
    "aberdeen", "bristol", "cardiff", "dundee", "exeter", "falmouth",
    "glasgow", "hull", "inverness", "jarrow", "kendal", "leeds",
    "manchester", "newcastle", "oxford", "plymouth", "reading", "sheffield",
    "truro", "ulverston", "wakefield", "york", "bath", "chester", "derby",
    "eastbourne", "folkestone", "gloucester", "harrogate", "ipswich",
]

# words that may occur in source articles
SOURCE_WORDS = [
    "was", "awarded", "by", "the", "council", "on", "raised", "from",
    "donors", "in", "analysts", "said", "had", "sought", "a", "spokesman",
    "for", "praised", "deal", ".",
]
# words reserved for references (never emitted in sources)
SUMMARY_WORDS = [
    "firm", "secured", "payment", "of", "gifts", "collected", "fresh",
    "funding", "new", "donations", "worth", "millions",
]
GENERIC_WORDS = [
    "officials", "described", "announcement", "as", "significant", "local",
    "reporters", "noted", "growing", "interest", "regional", "projects",
    "statement", "released", "confirmed", "earlier", "plans", "community",
    "leaders", "welcomed", "news", "during", "briefing", "media", "outlets",
    "covered", "story", "widely", "residents", "expressed", "cautious",
    "optimism", "about", "scheme", "several", "groups", "raised-questions",
    "meeting", "discussed", "timeline", "budget", "review", "process",
    "expected", "conclude", "later", "this", "year", "board", "members",
    "voted", "unanimously", "approve", "proposal", "critics", "argued",
    "more", "oversight", "needed", "supporters", "pointed", "benefits",
    "programme", "independent", "audit", "scheduled", "next", "quarter",
    "staff", "numbers", "remain", "stable", "according", "filings",
    "market", "reaction", "muted", "shares", "unchanged", "trading",
    "partners", "signalled", "continued", "commitment", "initiative",
    "details", "remained", "unclear", "press", "release", "government",
    "sources", "familiar", "with", "matter", "declined", "comment",
    "further", "questions", "referred", "external", "advisers", "campaign",
    "volunteers", "helped", "organise", "events", "across", "region",
    "turnout", "exceeded", "expectations", "organisers", "thanked",
    "everyone", "involved", "effort", "observers",
]

_SPLIT_ID = {"train": 0, "valid": 1, "test": 2}

RISKY_MULT = {"award": 0.88, "raise": 0.66}
SAFE_MULT = 0.084
SPECIFIC_SHARE = 0.90
FAMILY_SHARE = 0.5  # share of "award" family
DISTRACTOR_SET_SIZE = 5


@dataclass
class GenConfig:
    n_train: int = 8000
    n_valid: int = 500
    n_test: int = 500
    noise_rate: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.noise_rate <= 1.0:
            raise CorpusError(f"noise_rate must be in [0, 1], got {self.noise_rate}")


@dataclass
class Example:
    id: str
    source: list  # token ids
    reference: list  # token ids (no BOS/EOS)
    entity_spans: list  # [start, end) pairs into reference
    noise_spans: list  # subset of entity_spans


@dataclass
class AlignmentProbe:
    """A reference prefix cut immediately before an entity span."""

    example_id: str
    context: list  # reference prefix token ids (up to the span start)
    span_token: int  # the token that followed in the reference
    gold_label: str  # factual_entity | nonfactual_entity


@dataclass
class Corpus:
    vocab: Vocabulary
    train: list
    valid: list
    test: list
    test_clean: list
    realized_noise_fraction: float
    config: GenConfig = None


def build_vocab():
    filler = SOURCE_WORDS + SUMMARY_WORDS + GENERIC_WORDS
    filler = filler[:150]
    assert len(filler) == 150, f"filler vocab has {len(filler)} words, need 150"
    tokens, tags = [], []
    for words, tag in (
        (filler, "none"),
        (PERSONS, "PERSON"),
        (ORGS, "ORG"),
        (MONIES, "MONEY"),
        (DATES, "DATE"),
        (CITIES, "CITY"),
    ):
        tokens.extend(words)
        tags.extend([tag] * len(words))
    return Vocabulary(tokens, tags)


def _noise_scale(rho):
    """Solve the tier scale so expected slot-noise fraction equals rho."""

    def realized(s):
        risky = sum(min(1.0, s * m) for m in RISKY_MULT.values()) / 2
        safe = min(1.0, s * SAFE_MULT)
        per_ref = SPECIFIC_SHARE * (2 * safe + risky) + (1 - SPECIFIC_SHARE) * 2 * safe
        slots = SPECIFIC_SHARE * 3 + (1 - SPECIFIC_SHARE) * 2
        return per_ref / slots

    lo, hi = 0.0, 1.0 / SAFE_MULT
    if rho >= realized(hi):
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if realized(mid) < rho:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def money_distractors(money_token):
    """Small deterministic confusion set for the 'raise' family's noise."""
    i = MONIES.index(money_token)
    return [MONIES[(i + 7 * j) % len(MONIES)] for j in range(1, DISTRACTOR_SET_SIZE + 1)]


def _gen_one(vocab, cfg, split, index, scale, apply_noise):
    """Build one example. All content draws happen before any noise draw, so
    the clean variant of an example is byte-identical apart from noise."""
    rng = np.random.default_rng((cfg.seed, _SPLIT_ID[split], index))
    fam = "award" if rng.random() < FAMILY_SHARE else "raise"
    org = ORGS[rng.integers(len(ORGS))]
    money = MONIES[rng.integers(len(MONIES))]
    date = DATES[rng.integers(len(DATES))]
    city = CITIES[rng.integers(len(CITIES))]
    org2, org3 = rng.choice([o for o in ORGS if o != org], size=2, replace=False)
    money2 = MONIES[rng.integers(len(MONIES))]
    while money2 == money:
        money2 = MONIES[rng.integers(len(MONIES))]
    city2 = CITIES[rng.integers(len(CITIES))]

    if fam == "award":
        lead = [org, "was", "awarded", money, "by", "the", "council", "on", date, "."]
        tail_ent = date
    else:
        lead = [org, "raised", money, "from", "donors", "in", city, "."]
        tail_ent = city

    extra = [
        ["analysts", "said", org2, "had", "sought", money2, "."],
        ["a", "spokesman", "for", org3, "praised", "the", "deal", "in", city2, "."],
    ]
    n_filler = int(rng.integers(0, 3))
    for _ in range(n_filler):
        words = rng.choice(GENERIC_WORDS, size=int(rng.integers(4, 8)), replace=False)
        extra.append(list(words) + ["."])
    order = rng.permutation(len(extra))
    sentences = [lead] + [extra[i] for i in order]
    source_tokens = [t for s in sentences for t in s]

    specific = rng.random() < SPECIFIC_SHARE
    verb = "secured" if fam == "award" else "collected"
    noun = ["payment", "of"] if fam == "award" else ["gifts", "of"]
    abstract = (
        ["fresh", "funding", "worth", "millions"]
        if fam == "award"
        else ["new", "donations", "worth", "millions"]
    )
    closer = "on" if fam == "award" else "in"
    if specific:
        ref = ["the", "firm", org, verb] + noun + [money, closer, tail_ent]
        slots = [(2, org, "safe"), (len(ref) - 3, money, fam), (len(ref) - 1, tail_ent, "safe")]
    else:
        ref = ["the", "firm", org, verb] + abstract + [closer, tail_ent]
        slots = [(2, org, "safe"), (len(ref) - 1, tail_ent, "safe")]

    source_set = set(source_tokens)
    entity_spans = [[pos, pos + 1] for pos, _, _ in slots]
    noise_spans = []
    if apply_noise:
        for pos, token, kind in slots:
            rate = scale * (SAFE_MULT if kind == "safe" else RISKY_MULT[kind])
            if rng.random() >= min(1.0, rate):
                continue
            if kind == "raise":
                pool = [m for m in money_distractors(token) if m not in source_set]
            else:
                tag = vocab.tag_of(vocab.token_to_id[token])
                siblings = [vocab.id_to_token[i] for i in vocab.entity_ids(tag)]
                pool = [s for s in siblings if s not in source_set and s != token]
            if not pool:
                raise CorpusError(f"lexicon exhausted for noise at {split}:{index}")
            ref[pos] = pool[int(rng.integers(len(pool)))]
            noise_spans.append([pos, pos + 1])

    return Example(
        id=f"{split}-{index:05d}",
        source=vocab.encode(source_tokens),
        reference=vocab.encode(ref),
        entity_spans=entity_spans,
        noise_spans=noise_spans,
    )


def generate(cfg):
    """Generate the full corpus (train/valid/test + clean test variant)."""
    vocab = build_vocab()
    scale = _noise_scale(cfg.noise_rate)
    splits = {}
    for split, n in (("train", cfg.n_train), ("valid", cfg.n_valid), ("test", cfg.n_test)):
        splits[split] = [_gen_one(vocab, cfg, split, i, scale, True) for i in range(n)]
    test_clean = [_gen_one(vocab, cfg, "test", i, scale, False) for i in range(cfg.n_test)]
    total_spans = sum(len(e.entity_spans) for e in splits["train"])
    total_noise = sum(len(e.noise_spans) for e in splits["train"])
    realized = total_noise / total_spans if total_spans else 0.0
    return Corpus(
        vocab=vocab,
        train=splits["train"],
        valid=splits["valid"],
        test=splits["test"],
        test_clean=test_clean,
        realized_noise_fraction=realized,
        config=cfg,
    )


# -- oracle ----------------------------------------------------------------


def oracle_judge(summary_ids, example, vocab):
    """Exact factuality verdict for a summary against one source.

    An entity token is unsupported iff it belongs to a lexicon and does not
    occur anywhere in the source. The sentence is faithful iff it contains
    zero unsupported entities.
    """
    source_set = set(example.source)
    entities = []
    for pos, tok in enumerate(summary_ids):
        if vocab.is_entity(tok):
            entities.append(
                {"pos": pos, "token_id": int(tok), "supported": tok in source_set}
            )
    n_unsupported = sum(1 for e in entities if not e["supported"])
    return {
        "entities": entities,
        "n_unsupported": n_unsupported,
        "sentence_verdict": "faithful" if n_unsupported == 0 else "unfaithful",
    }


# -- alignment probes ------------------------------------------------------


def build_probes(examples, vocab, n, seed=0):
    """Balanced probe set: n/2 before injected entities, n/2 before clean ones."""
    noisy, clean = [], []
    for ex in examples:
        noise = {tuple(s) for s in ex.noise_spans}
        for span in ex.entity_spans:
            probe = AlignmentProbe(
                example_id=ex.id,
                context=list(ex.reference[: span[0]]),
                span_token=int(ex.reference[span[0]]),
                gold_label="nonfactual_entity" if tuple(span) in noise else "factual_entity",
            )
            (noisy if tuple(span) in noise else clean).append(probe)
    half = n // 2
    if len(noisy) < half or len(clean) < half:
        raise CorpusError(
            f"not enough spans for {n} balanced probes "
            f"({len(noisy)} noisy, {len(clean)} clean available)"
        )
    rng = np.random.default_rng(seed)
    pick_noisy = [noisy[i] for i in rng.choice(len(noisy), size=half, replace=False)]
    pick_clean = [clean[i] for i in rng.choice(len(clean), size=half, replace=False)]
    return pick_noisy + pick_clean


# -- serialization ---------------------------------------------------------


def save_split(examples, vocab, path):
    with open(path, "w") as f:
        for ex in examples:
            rec = {
                "id": ex.id,
                "source": vocab.decode(ex.source),
                "reference": vocab.decode(ex.reference),
                "entity_spans": ex.entity_spans,
                "noise_spans": ex.noise_spans,
            }
            f.write(json.dumps(rec) + "\n")


def load_split(path, vocab):
    out = []
    with open(path) as f:
        for line in f:
            rec = json.loads(line)
            out.append(
                Example(
                    id=rec["id"],
                    source=vocab.encode(rec["source"]),
                    reference=vocab.encode(rec["reference"]),
                    entity_spans=[list(s) for s in rec["entity_spans"]],
                    noise_spans=[list(s) for s in rec["noise_spans"]],
                )
            )
    return out
