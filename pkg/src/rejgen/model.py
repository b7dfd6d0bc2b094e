"""Small attention-based encoder-decoder over V ∪ {REJ}.

Fixed shape: 2 self-attention encoder layers, 2 decoder layers with source
attention, single head, d=64 by default. The decoder's output softmax always
includes the rejection class; suppressing it at inference is the decoding
module's job.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndcore as nd
from .vocab import BOS, PAD, Vocabulary


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    n_ids: int  # |V| + 1, including REJ
    d_model: int = 64
    d_ffn: int = 128
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    max_src_len: int = 96
    max_tgt_len: int = 32
    dropout: float = 0.1

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class StepDistribution:
    """Per-step probabilities over V ∪ {REJ} at one decode position."""

    probs: np.ndarray  # (n_ids,), sums to 1
    rejection_prob: float
    context: tuple = ("", 0)  # (example id, step)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        assert abs(self.probs.sum() - 1.0) < 1e-9
        assert np.all(self.probs >= 0)


def _init_params(cfg, rng):
    d, f = cfg.d_model, cfg.d_ffn
    scale = 1.0 / np.sqrt(d)
    p = {}
    p["embed"] = rng.normal(0.0, scale, (cfg.n_ids, d))
    p["pos_src"] = rng.normal(0.0, scale, (cfg.max_src_len, d))
    p["pos_tgt"] = rng.normal(0.0, scale, (cfg.max_tgt_len, d))
    def attn(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            p[f"{prefix}.{w}"] = rng.normal(0.0, scale, (d, d))
        p[f"{prefix}.ln_g"] = np.ones(d)
        p[f"{prefix}.ln_b"] = np.zeros(d)
    def ffn(prefix):
        p[f"{prefix}.w1"] = rng.normal(0.0, scale, (d, f))
        p[f"{prefix}.b1"] = np.zeros(f)
        p[f"{prefix}.w2"] = rng.normal(0.0, 1.0 / np.sqrt(f), (f, d))
        p[f"{prefix}.b2"] = np.zeros(d)
        p[f"{prefix}.ln_g"] = np.ones(d)
        p[f"{prefix}.ln_b"] = np.zeros(d)
    for i in range(cfg.n_enc_layers):
        attn(f"enc{i}.self")
        ffn(f"enc{i}.ffn")
    for i in range(cfg.n_dec_layers):
        attn(f"dec{i}.self")
        attn(f"dec{i}.cross")
        ffn(f"dec{i}.ffn")
    p["out.w"] = rng.normal(0.0, scale, (d, cfg.n_ids))
    p["out.b"] = np.zeros(cfg.n_ids)
    return p


def _layernorm(x, g, b):
    mu = nd.mean(x, axis=-1, keepdims=True)
    cen = x - mu
    var = nd.mean(nd.mul(cen, cen), axis=-1, keepdims=True)
    inv = nd.power(var + 1e-6, -0.5)
    return nd.mul(cen, inv) * g + b


class Seq2SeqModel:
    """Holds config + parameter arrays; forward passes build fresh graphs."""

    def __init__(self, config, params=None, seed=0):
        self.config = config
        if params is None:
            params = _init_params(config, np.random.default_rng(seed))
        self.params = params
        self._drop_rng = None  # set during training steps

    # -- parameter plumbing ------------------------------------------------

    def tensors(self, requires_grad=False):
        return {k: nd.Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    # -- building blocks ---------------------------------------------------

    def _attend(self, t, prefix, q_in, kv_in, mask, causal=False):
        """Single-head attention block with residual + layernorm.

        mask: bool (B, Lkv) True at padded key positions, or None.
        """
        d = self.config.d_model
        q = nd.matmul(q_in, t[f"{prefix}.wq"])
        k = nd.matmul(kv_in, t[f"{prefix}.wk"])
        v = nd.matmul(kv_in, t[f"{prefix}.wv"])
        scores = nd.matmul(q, nd.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(d))
        if mask is not None:
            scores = nd.mask_fill(scores, mask[:, None, :], -1e9)
        if causal:
            L = q.data.shape[1]
            cm = np.triu(np.ones((L, L), dtype=bool), k=1)
            scores = nd.mask_fill(scores, cm[None, :, :], -1e9)
        attn = nd.softmax(scores, axis=-1)
        mixed = nd.matmul(nd.matmul(attn, v), t[f"{prefix}.wo"])
        mixed = self._maybe_drop(mixed)
        return _layernorm(q_in + mixed, t[f"{prefix}.ln_g"], t[f"{prefix}.ln_b"])

    def _ffn(self, t, prefix, x):
        h = nd.relu(nd.matmul(x, t[f"{prefix}.w1"]) + t[f"{prefix}.b1"])
        h = nd.matmul(h, t[f"{prefix}.w2"]) + t[f"{prefix}.b2"]
        h = self._maybe_drop(h)
        return _layernorm(x + h, t[f"{prefix}.ln_g"], t[f"{prefix}.ln_b"])

    def _maybe_drop(self, x):
        if self._drop_rng is not None and self.config.dropout > 0:
            return nd.dropout(x, self.config.dropout, self._drop_rng)
        return x

    # -- batched forward ---------------------------------------------------

    def encode_batch(self, t, src_ids, src_pad):
        """src_ids: (B, Ls) int; src_pad: bool (B, Ls) True at PAD."""
        cfg = self.config
        Ls = src_ids.shape[1]
        if Ls > cfg.max_src_len:
            raise ModelError(f"source length {Ls} exceeds max {cfg.max_src_len}")
        x = nd.embed(t["embed"], src_ids) + nd.embed(t["pos_src"], np.arange(Ls))
        x = self._maybe_drop(x)
        for i in range(cfg.n_enc_layers):
            x = self._attend(t, f"enc{i}.self", x, x, src_pad)
            x = self._ffn(t, f"enc{i}.ffn", x)
        return x

    def decode_batch(self, t, memory, src_pad, tgt_in):
        """Teacher-forced pass. tgt_in: (B, Lt) decoder input ids (BOS-led).

        Returns probs over n_ids: (B, Lt, n_ids)."""
        cfg = self.config
        Lt = tgt_in.shape[1]
        if Lt > cfg.max_tgt_len:
            raise ModelError(f"target length {Lt} exceeds max {cfg.max_tgt_len}")
        y = nd.embed(t["embed"], tgt_in) + nd.embed(t["pos_tgt"], np.arange(Lt))
        y = self._maybe_drop(y)
        for i in range(cfg.n_dec_layers):
            y = self._attend(t, f"dec{i}.self", y, y, None, causal=True)
            y = self._attend(t, f"dec{i}.cross", y, memory, src_pad)
            y = self._ffn(t, f"dec{i}.ffn", y)
        logits = nd.matmul(y, t["out.w"]) + t["out.b"]
        return nd.softmax(logits, axis=-1)

    # -- single-example inference API --------------------------------------

    def _check_source(self, source):
        source = list(source)
        if not 1 <= len(source) <= self.config.max_src_len:
            raise ModelError(
                f"source length {len(source)} outside [1, {self.config.max_src_len}]"
            )
        for i in source:
            if not 0 <= i < self.config.n_ids:
                raise ModelError(f"source id {i} out of vocabulary range")
            if i == self.config.n_ids - 1:
                raise ModelError("REJ id not allowed in encoder input")
        return source

    def encode(self, source):
        """Encode one source; returns (memory (L,d) ndarray, src ids)."""
        source = self._check_source(source)
        with nd.no_grad():
            t = self.tensors()
            ids = np.asarray([source])
            pad = np.zeros_like(ids, dtype=bool)
            mem = self.encode_batch(t, ids, pad)
        return Memory(self, mem.data, np.asarray(source))

    def decode_step(self, memory, prefix, example_id=""):
        """Distribution for the next token after `prefix` (BOS-led ids)."""
        dists = memory.step_many(np.asarray([prefix]))
        return StepDistribution(
            probs=dists[0],
            rejection_prob=float(dists[0][-1]),
            context=(example_id, len(prefix) - 1),
        )


class Memory:
    """Encoded source states reused across decode steps of one example."""

    def __init__(self, model, states, src_ids):
        self.model = model
        self.states = states  # (1, Ls, d)
        self.src_ids = src_ids

    def step_many(self, prefixes):
        """Next-token probs for several BOS-led prefixes of equal length.

        prefixes: (B, t) int array. Returns (B, n_ids)."""
        prefixes = np.asarray(prefixes)
        if prefixes.ndim != 2 or prefixes.shape[1] == 0:
            raise ModelError("prefix must be non-empty")
        if not np.all(prefixes[:, 0] == BOS):
            raise ModelError("prefix must begin with BOS")
        if prefixes.shape[1] > self.model.config.max_tgt_len:
            raise ModelError(
                f"prefix length {prefixes.shape[1]} exceeds max "
                f"{self.model.config.max_tgt_len}"
            )
        with nd.no_grad():
            t = self.model.tensors()
            B = prefixes.shape[0]
            mem = nd.Tensor(np.broadcast_to(self.states, (B, *self.states.shape[1:])).copy())
            pad = np.zeros((B, self.states.shape[1]), dtype=bool)
            probs = self.model.decode_batch(t, mem, pad, prefixes)
        return probs.data[:, -1, :]
