"""Training objectives: plain NLL, the rejection loss, and loss truncation.

The rejection loss augments per-token NLL at entity positions (after the
warm-up) with a rejection escape hatch:

    term_t = -[(1 - p_r) * log(p(y*) / (1 - p_r)) + alpha * log(1 - p_r)]

With p_r = 0 this reduces exactly to -log p(y*). All probabilities are
clamped to [1e-12, 1 - 1e-12] before logs so saturated distributions stay
finite.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import ndcore as nd
from .ndcore import EPS


class LossConfigError(ValueError):
    pass


@dataclass
class RejectionLossConfig:
    alpha: float = 1.0
    warmup_steps: int = 0
    entity_only: bool = True

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise LossConfigError(f"alpha must be finite and >= 0, got {self.alpha}")
        if self.warmup_steps < 0:
            raise LossConfigError("warmup_steps must be >= 0")


@dataclass
class TruncationConfig:
    level: str  # "sentence" | "token"
    c: float
    window: int = 10
    # Hotstart: train on all units for this many steps before truncating, so
    # the loss ranking reflects per-unit noise rather than whatever the
    # untrained model happens to fit first. Without it, aggressive c can lock
    # onto an early majority cluster: everything outside it drifts to high
    # loss, stays dropped, and the model collapses onto one template.
    warmup_steps: int = 300

    def __post_init__(self):
        if self.level not in ("sentence", "token"):
            raise LossConfigError(f"unknown truncation level {self.level!r}")
        if not 0.0 <= self.c < 1.0:
            raise LossConfigError(f"drop fraction c must be in [0, 1), got {self.c}")
        if self.window < 1:
            raise LossConfigError("window must be >= 1")
        if self.warmup_steps < 0:
            raise LossConfigError("warmup_steps must be >= 0")


@dataclass
class LossBreakdown:
    fidelity_term: float
    rejection_penalty: float
    total: float
    rej_probs: list = field(default_factory=list)


def _clamp(t, lo, hi):
    t = nd.mask_fill(t, t.data < lo, lo)
    return nd.mask_fill(t, t.data > hi, hi)


def loss_terms(probs, targets, rej_id, entity_mask=None, cfg=None, global_step=0):
    """Per-token loss tensors for a batch of teacher-forced distributions.

    probs: Tensor (..., n_ids); targets: int array (...). With cfg None the
    objective is plain NLL. Returns (per_token, fidelity, penalty) Tensors of
    the targets' shape. Positions where entity_mask is False, or before the
    warm-up ends, fall back to the plain NLL term (p_r treated as 0).
    """
    targets = np.asarray(targets)
    if np.any(targets == rej_id):
        raise LossConfigError("targets must not contain the REJ id")
    p_true = _clamp(nd.gather_last(probs, targets), EPS, 1.0 - EPS)
    log_p = nd.log(p_true)
    nll_tok = -log_p
    if cfg is None:
        zero = nd.Tensor(np.zeros(targets.shape))
        return nll_tok, nll_tok, zero
    p_r = nd.gather_last(probs, np.full(targets.shape, rej_id))
    one_minus = _clamp(1.0 - p_r, EPS, 1.0)
    log_om = nd.log(one_minus)
    fid_tok = -nd.mul(one_minus, log_p - log_om)
    pen_tok = -cfg.alpha * log_om
    if entity_mask is None:
        entity_mask = np.ones(targets.shape, dtype=bool)
    active = np.asarray(entity_mask, dtype=bool) & (global_step >= cfg.warmup_steps)
    if not cfg.entity_only:
        active = np.ones(targets.shape, dtype=bool) & (global_step >= cfg.warmup_steps)
    per_tok = nd.where(active, fid_tok + pen_tok, nll_tok)
    fidelity = nd.where(active, fid_tok, nll_tok)
    penalty = nd.where(active, pen_tok, nd.Tensor(np.zeros(targets.shape)))
    return per_tok, fidelity, penalty


def _stack_dists(dists, targets):
    if len(dists) != len(targets):
        raise LossConfigError(
            f"length mismatch: {len(dists)} distributions vs {len(targets)} targets"
        )
    if len(dists) == 0:
        raise LossConfigError("empty sequence")
    return np.stack([d.probs for d in dists])


def nll_loss(dists, targets):
    """Sum of per-token negative log-likelihoods (LossBreakdown)."""
    probs = _stack_dists(dists, targets)
    rej_id = probs.shape[-1] - 1
    with nd.no_grad():
        per_tok, fid, pen = loss_terms(nd.Tensor(probs), targets, rej_id)
    total = float(per_tok.data.sum())
    return LossBreakdown(
        fidelity_term=total,
        rejection_penalty=0.0,
        total=total,
        rej_probs=[float(d.rejection_prob) for d in dists],
    )


def rejection_loss(dists, targets, entity_mask, cfg, global_step=0):
    """Rejection objective over one sequence of step distributions."""
    probs = _stack_dists(dists, targets)
    rej_id = probs.shape[-1] - 1
    entity_mask = np.asarray(entity_mask, dtype=bool)
    if entity_mask.shape != (len(targets),):
        raise LossConfigError("entity_mask must align with targets")
    with nd.no_grad():
        per_tok, fid, pen = loss_terms(
            nd.Tensor(probs), targets, rej_id, entity_mask, cfg, global_step
        )
    return LossBreakdown(
        fidelity_term=float(fid.data.sum()),
        rejection_penalty=float(pen.data.sum()),
        total=float(per_tok.data.sum()),
        rej_probs=[float(d.rejection_prob) for d in dists],
    )


class TruncationState:
    """Trailing window of recent batches' unit losses for quantile estimation."""

    def __init__(self, window):
        self.past = deque(maxlen=max(0, window - 1))

    def pool_with(self, losses):
        return np.concatenate([*self.past, losses]) if self.past else np.asarray(losses)

    def push(self, losses):
        self.past.append(np.asarray(losses, dtype=np.float64))


def truncation_filter(batch_losses, cfg, state=None):
    """Kept-unit mask for the current batch under loss truncation.

    Ranks units over the trailing window (previous `cfg.window - 1` batches
    plus the current one) and marks the ceil(c * N) highest-loss units of
    that pool as dropped; ties are broken so that lower indices are kept.
    Returns the bool kept mask for the current batch's units.
    """
    losses = np.asarray(batch_losses, dtype=np.float64)
    if state is None:
        state = TruncationState(cfg.window)
    pool = state.pool_with(losses)
    n_pool = len(pool)
    k = int(np.ceil(cfg.c * n_pool))
    kept = np.ones(len(losses), dtype=bool)
    if k > 0:
        order = np.lexsort((-np.arange(n_pool), -pool))  # loss desc, index desc
        dropped = order[:k]
        cur_start = n_pool - len(losses)
        cur_dropped = dropped[dropped >= cur_start] - cur_start
        kept[cur_dropped] = False
    state.push(losses)
    return kept
