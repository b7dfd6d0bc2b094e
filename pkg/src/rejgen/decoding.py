"""Greedy and beam-search decoding with rejection-regularized scoring.

Complete hypotheses are ranked by

    score(y) = log p(y | x) - lambda * R(y)

where log p accumulates the per-step distributions renormalized over the
ordinary vocabulary (REJ mass removed), and R aggregates the per-step
rejection probabilities: mean of log(1/(1-p_r))^k for the "sum"
regularizer, or the max over steps for "max". During the search, partial
hypotheses are pruned by the same running quantity; completed hypotheses
are re-scored exactly before the final ranking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .vocab import BOS, EOS, PAD

P_R_CAP = 1.0 - 1e-9


class DecodeError(ValueError):
    pass


class SaturationError(DecodeError):
    pass


@dataclass
class DecodeConfig:
    beam_size: int = 6
    lam: float = 0.0
    k: int = 1
    regularizer: str = "sum"
    max_len: int = 32
    allow_rej_emission: bool = False

    def __post_init__(self):
        if self.beam_size < 1:
            raise DecodeError(f"beam_size must be >= 1, got {self.beam_size}")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise DecodeError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.k < 1:
            raise DecodeError(f"k must be >= 1, got {self.k}")
        if self.regularizer not in ("sum", "max"):
            raise DecodeError(f"unknown regularizer {self.regularizer!r}")


@dataclass
class Hypothesis:
    tokens: list  # BOS-led token ids
    logprob: float  # cumulative log prob under renormalized per-step dists
    rej_probs: list  # raw p_r at each emitted step
    finished: bool
    penalty: float = 0.0
    score: float = 0.0


def renormalize(dist):
    """Distribution over V only: each ordinary prob divided by (1 - p_r)."""
    p_r = float(dist.probs[-1])
    if p_r >= 1.0 - 1e-9:
        raise SaturationError(
            f"rejection probability saturated (p_r={p_r}) at context {dist.context}"
        )
    return dist.probs[:-1] / (1.0 - p_r)


def reg_penalty(rej_probs, regularizer="sum", k=1):
    """Aggregate rejection penalty over one hypothesis's steps (>= 0)."""
    rej_probs = np.asarray(rej_probs, dtype=np.float64)
    if rej_probs.size == 0:
        raise DecodeError("reg_penalty: empty rejection-probability sequence")
    terms = np.log(1.0 / (1.0 - np.minimum(rej_probs, P_R_CAP))) ** k
    if regularizer == "sum":
        return float(terms.mean())
    if regularizer == "max":
        return float(terms.max())
    raise DecodeError(f"unknown regularizer {regularizer!r}")


def _final_rank(hyps, cfg):
    for h in hyps:
        h.penalty = reg_penalty(h.rej_probs, cfg.regularizer, cfg.k)
        h.score = h.logprob - cfg.lam * h.penalty
    hyps.sort(key=lambda h: (-h.score, tuple(h.tokens)))
    return hyps


def beam_search(model, source, cfg):
    """Ranked complete hypotheses for one source under the regularized score.

    Candidate tokens are drawn from the ordinary vocabulary (PAD and BOS
    excluded; REJ excluded unless cfg.allow_rej_emission). If nothing
    reaches EOS within cfg.max_len steps, the best unfinished hypothesis is
    returned with finished=False.
    """
    memory = model.encode(source)
    n_ids = model.config.n_ids
    rej_id = n_ids - 1
    max_len = min(cfg.max_len, model.config.max_tgt_len - 1)

    banned = [PAD, BOS] + ([] if cfg.allow_rej_emission else [rej_id])
    alive = [Hypothesis(tokens=[BOS], logprob=0.0, rej_probs=[], finished=False)]
    finished = []

    for _ in range(max_len):
        prefixes = np.array([h.tokens for h in alive])
        dists = memory.step_many(prefixes)  # (B, n_ids)
        p_r = np.minimum(dists[:, rej_id], P_R_CAP)
        if cfg.allow_rej_emission:
            step_probs = dists.copy()
        else:
            step_probs = dists / (1.0 - p_r)[:, None]
        step_probs[:, banned] = 0.0
        with np.errstate(divide="ignore"):
            logp = np.log(step_probs)

        cand_logprob = np.array([h.logprob for h in alive])[:, None] + logp
        pens = _running_penalty(alive, p_r, cfg)
        cand_score = cand_logprob - cfg.lam * pens[:, None]

        flat = cand_score.ravel()
        n_keep = min(cfg.beam_size + len(alive), flat.size)
        top = np.argpartition(-flat, n_keep - 1)[:n_keep]
        cands = []
        for f in top:
            i, j = divmod(int(f), n_ids)
            if not np.isfinite(flat[f]):
                continue
            cands.append(
                (
                    -flat[f],
                    tuple(alive[i].tokens) + (j,),
                    i,
                    j,
                    cand_logprob[i, j],
                )
            )
        cands.sort()
        next_alive = []
        for _, toks, i, j, lp in cands:
            h = Hypothesis(
                tokens=list(toks),
                logprob=float(lp),
                rej_probs=alive[i].rej_probs + [float(p_r[i])],
                finished=(j == EOS),
            )
            if h.finished:
                finished.append(h)
            elif len(next_alive) < cfg.beam_size:
                next_alive.append(h)
        alive = next_alive
        if not alive:
            break

    if finished:
        return _final_rank(finished, cfg)
    if not alive:
        raise DecodeError("beam search produced no hypotheses")
    return _final_rank(alive, cfg)  # unfinished fallback, flagged finished=False


def _running_penalty(alive, p_r, cfg):
    """Regularized-score penalty for each hypothesis extended by one step."""
    step_term = np.log(1.0 / (1.0 - p_r)) ** cfg.k
    out = np.empty(len(alive))
    for i, h in enumerate(alive):
        if cfg.regularizer == "sum":
            prior = sum(np.log(1.0 / (1.0 - np.minimum(p, P_R_CAP))) ** cfg.k
                        for p in h.rej_probs)
            out[i] = (prior + step_term[i]) / (len(h.rej_probs) + 1)
        else:
            prior = max(
                (np.log(1.0 / (1.0 - np.minimum(p, P_R_CAP))) ** cfg.k
                 for p in h.rej_probs),
                default=0.0,
            )
            out[i] = max(prior, step_term[i])
    return out


def greedy_decode(model, source, allow_rej_emission=False, max_len=32, example_id=""):
    """Argmax decode; in diagnostic mode the REJ token itself can be emitted."""
    memory = model.encode(source)
    n_ids = model.config.n_ids
    rej_id = n_ids - 1
    max_len = min(max_len, model.config.max_tgt_len - 1)
    tokens = [BOS]
    logprob = 0.0
    rej_probs = []
    finished = False
    for step in range(max_len):
        dist = model.decode_step(memory, tokens, example_id=example_id)
        p_r = min(float(dist.probs[rej_id]), P_R_CAP)
        rej_probs.append(p_r)
        if allow_rej_emission and int(np.argmax(dist.probs)) == rej_id:
            tokens.append(rej_id)
            logprob += float(np.log(max(dist.probs[rej_id], 1e-300)))
            continue
        renorm = dist.probs[:-1] / (1.0 - p_r)
        renorm[[PAD, BOS]] = 0.0
        j = int(np.argmax(renorm))
        tokens.append(j)
        logprob += float(np.log(max(renorm[j], 1e-300)))
        if j == EOS:
            finished = True
            break
    h = Hypothesis(tokens=tokens, logprob=logprob, rej_probs=rej_probs, finished=finished)
    h.penalty = reg_penalty(h.rej_probs) if h.rej_probs else 0.0
    h.score = h.logprob
    return h
