"""Adam optimizer with bias correction, operating on named parameter dicts."""

from __future__ import annotations

import numpy as np


class AdamError(RuntimeError):
    pass


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0


def adam_step(params, grads, state, lr=3e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on `params`.

    `params` and `grads` are dicts name -> ndarray with matching shapes.
    Raises AdamError if any gradient is non-finite (aborts before mutating).
    """
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise AdamError(
                f"adam_step: grad shape {g.shape} does not match "
                f"param '{name}' shape {params[name].shape}"
            )
        if not np.all(np.isfinite(g)):
            raise AdamError(f"adam_step: non-finite gradient in '{name}'")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state
