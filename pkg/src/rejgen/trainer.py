"""Training loop: MLE, rejection, and loss-truncation objectives."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import ndcore as nd
from .losses import (
    RejectionLossConfig,
    TruncationConfig,
    TruncationState,
    loss_terms,
    truncation_filter,
)
from .model import ModelConfig, Seq2SeqModel
from .optim import AdamState, adam_step
from .vocab import BOS, EOS, PAD


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 6000
    batch_size: int = 32
    lr: float = 3e-3
    dropout: float = 0.1


def tensorize(examples, vocab):
    """Pad the split into flat arrays for fast batch slicing."""
    n = len(examples)
    ls = max(len(e.source) for e in examples)
    lt = max(len(e.reference) for e in examples) + 1  # +1 for EOS
    src = np.full((n, ls), PAD, dtype=np.int64)
    tgt_in = np.full((n, lt), PAD, dtype=np.int64)
    tgt_out = np.full((n, lt), PAD, dtype=np.int64)
    valid = np.zeros((n, lt), dtype=bool)
    entity = np.zeros((n, lt), dtype=bool)
    noise = np.zeros((n, lt), dtype=bool)
    for i, ex in enumerate(examples):
        src[i, : len(ex.source)] = ex.source
        ref = ex.reference
        tgt_in[i, 0] = BOS
        tgt_in[i, 1 : len(ref) + 1] = ref
        tgt_out[i, : len(ref)] = ref
        tgt_out[i, len(ref)] = EOS
        valid[i, : len(ref) + 1] = True
        for s, e in ex.entity_spans:
            entity[i, s:e] = True
        for s, e in ex.noise_spans:
            noise[i, s:e] = True
    return {
        "src": src,
        "src_pad": src == PAD,
        "tgt_in": tgt_in,
        "tgt_out": tgt_out,
        "valid": valid,
        "entity": entity,
        "noise": noise,
    }


def train(examples, vocab, objective, obj_cfg=None, train_cfg=None, model_cfg=None,
          seed=0, log_path=None):
    """Train a model on `examples`; returns (model, log records).

    objective: "mle" | "rejection" | "truncation", with obj_cfg the matching
    RejectionLossConfig / TruncationConfig (None for mle). Deterministic
    given the seed.
    """
    train_cfg = train_cfg or TrainConfig()
    if objective == "rejection" and not isinstance(obj_cfg, RejectionLossConfig):
        raise ValueError("rejection objective requires a RejectionLossConfig")
    if objective == "truncation" and not isinstance(obj_cfg, TruncationConfig):
        raise ValueError("truncation objective requires a TruncationConfig")
    if objective in ("rejection", "truncation") and obj_cfg.warmup_steps > train_cfg.steps:
        raise ValueError("warmup_steps exceeds total steps")
    if not examples:
        raise ValueError("empty corpus")

    model_cfg = model_cfg or ModelConfig(n_ids=len(vocab), dropout=train_cfg.dropout)
    model = Seq2SeqModel(model_cfg, seed=seed)
    data = tensorize(examples, vocab)
    rng = np.random.default_rng(seed)
    drop_rng = np.random.default_rng(seed + 1)
    state = AdamState(model.params)
    trunc_state = TruncationState(obj_cfg.window) if objective == "truncation" else None
    rej_id = vocab.rej_id
    log = []
    sink = open(log_path, "w") if log_path else None

    for step in range(train_cfg.steps):
        idx = rng.integers(0, len(examples), size=train_cfg.batch_size)
        src, src_pad = data["src"][idx], data["src_pad"][idx]
        tgt_in, tgt_out = data["tgt_in"][idx], data["tgt_out"][idx]
        valid, entity = data["valid"][idx], data["entity"][idx]

        t = model.tensors(requires_grad=True)
        model._drop_rng = drop_rng if train_cfg.dropout > 0 else None
        mem = model.encode_batch(t, src, src_pad)
        probs = model.decode_batch(t, mem, src_pad, tgt_in)
        model._drop_rng = None

        rej_cfg = obj_cfg if objective == "rejection" else None
        per_tok, fid, pen = loss_terms(
            probs, tgt_out, rej_id, entity, rej_cfg, global_step=step
        )

        keep = valid.copy()
        dropped_units = 0
        if objective == "truncation" and step >= obj_cfg.warmup_steps:
            tok_nll = per_tok.data  # plain NLL under this objective
            if obj_cfg.level == "sentence":
                unit_losses = (tok_nll * valid).sum(axis=1)
                kept = truncation_filter(unit_losses, obj_cfg, trunc_state)
                keep &= kept[:, None]
                dropped_units = int((~kept).sum())
            else:
                flat_idx = np.argwhere(valid)
                unit_losses = tok_nll[valid]
                kept = truncation_filter(unit_losses, obj_cfg, trunc_state)
                drop_pos = flat_idx[~kept]
                keep[drop_pos[:, 0], drop_pos[:, 1]] = False
                dropped_units = int((~kept).sum())

        n_kept = max(1, int(keep.sum()))
        loss = nd.tsum(nd.mask_fill(per_tok, ~keep, 0.0)) * (1.0 / n_kept)
        if not np.isfinite(loss.data):
            raise TrainingDiverged(f"loss became non-finite at step {step}")
        loss.backward()
        grads = {k: v.grad for k, v in t.items() if v.grad is not None}
        adam_step(model.params, grads, state, lr=train_cfg.lr)

        with np.errstate(invalid="ignore"):
            p_r = probs.data[..., rej_id]
        ent_mask = entity & valid
        rec = {
            "step": step,
            "objective": objective,
            "total": float(loss.data),
            "fidelity": float((fid.data * keep).sum() / n_kept),
            "rejection_penalty": float((pen.data * keep).sum() / n_kept),
            "mean_entity_rej_prob": float(p_r[ent_mask].mean()) if ent_mask.any() else 0.0,
            "dropped_units": dropped_units,
        }
        log.append(rec)
        if sink:
            sink.write(json.dumps(rec) + "\n")
    if sink:
        sink.close()
    return model, log
