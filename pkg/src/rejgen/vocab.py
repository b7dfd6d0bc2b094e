"""Token inventory with special ids and per-token entity-lexicon tags.

Layout: PAD=0, BOS=1, EOS=2, then ordinary tokens, then the rejection
class as the single highest id. Serialized one token per line with its
tag after a tab; round-trips exactly.
"""

from __future__ import annotations

PAD, BOS, EOS = 0, 1, 2
SPECIALS = ["<PAD>", "<BOS>", "<EOS>"]
REJ_TOKEN = "<REJ>"
ENTITY_TAGS = ("PERSON", "ORG", "MONEY", "DATE", "CITY")


class VocabError(ValueError):
    pass


class Vocabulary:
    def __init__(self, tokens, tags):
        """tokens: ordinary tokens (no specials, no REJ); tags: parallel list
        of 'none' or an entity tag."""
        if len(tokens) != len(tags):
            raise VocabError("tokens and tags must be parallel")
        self.id_to_token = SPECIALS + list(tokens) + [REJ_TOKEN]
        self.id_to_tag = ["none"] * 3 + list(tags) + ["none"]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise VocabError("duplicate tokens in vocabulary")
        self.rej_id = len(self.id_to_token) - 1

    def __len__(self):
        """Total number of ids including REJ (= |V| + 1)."""
        return len(self.id_to_token)

    @property
    def n_ordinary(self):
        """|V|: every id except REJ."""
        return len(self.id_to_token) - 1

    def encode(self, tokens):
        try:
            return [self.token_to_id[t] for t in tokens]
        except KeyError as e:
            raise VocabError(f"unknown token {e.args[0]!r}") from None

    def decode(self, ids):
        return [self.id_to_token[i] for i in ids]

    def tag_of(self, token_id):
        return self.id_to_tag[token_id]

    def is_entity(self, token_id):
        return self.id_to_tag[token_id] != "none"

    def entity_ids(self, tag=None):
        return [
            i
            for i, t in enumerate(self.id_to_tag)
            if (t != "none" if tag is None else t == tag)
        ]

    # -- serialization -----------------------------------------------------

    def save(self, path):
        with open(path, "w") as f:
            for tok, tag in zip(self.id_to_token, self.id_to_tag):
                f.write(f"{tok}\t{tag}\n")

    @classmethod
    def load(cls, path):
        toks, tags = [], []
        with open(path) as f:
            for line in f:
                tok, tag = line.rstrip("\n").split("\t")
                toks.append(tok)
                tags.append(tag)
        if toks[:3] != SPECIALS or toks[-1] != REJ_TOKEN:
            raise VocabError(f"malformed vocabulary file {path}")
        return cls(toks[3:-1], tags[3:-1])
