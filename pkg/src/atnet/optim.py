"""Adam optimizer on float32 parameter storage with float64 step math.

Moments are stored float32 so optimizer state round-trips losslessly
through checkpoints: a resumed run recomputes exactly the same trajectory
as an uninterrupted one.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class AdamConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class AdamState:
    """Per-parameter first/second moments plus step and rejection counters."""

    def __init__(self, params: dict):
        self.m = {k: np.zeros_like(v, dtype=np.float32) for k, v in params.items()}
        self.v = {k: np.zeros_like(v, dtype=np.float32) for k, v in params.items()}
        self.t = 0
        self.rejected = 0

    def as_dict(self) -> dict:
        return {"m": self.m, "v": self.v, "t": self.t, "rejected": self.rejected}

    @classmethod
    def from_dict(cls, params: dict, d: dict) -> "AdamState":
        state = cls(params)
        for k in state.m:
            state.m[k] = np.asarray(d["m"][k], dtype=np.float32)
            state.v[k] = np.asarray(d["v"][k], dtype=np.float32)
        state.t = int(d["t"])
        state.rejected = int(d.get("rejected", 0))
        return state


def adam_step(params: dict, grads: dict, state: AdamState, cfg: AdamConfig) -> bool:
    """One bias-corrected Adam update in place.

    Non-finite gradients reject the whole step (parameters and moments
    untouched, rejection counter incremented); returns False in that case.
    """
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            state.rejected += 1
            return False
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name in params:
        g = np.asarray(grads[name], dtype=np.float64)
        m32 = (cfg.beta1 * state.m[name].astype(np.float64) + (1.0 - cfg.beta1) * g).astype(
            np.float32
        )
        v32 = (cfg.beta2 * state.v[name].astype(np.float64) + (1.0 - cfg.beta2) * g * g).astype(
            np.float32
        )
        state.m[name] = m32
        state.v[name] = v32
        m_hat = m32.astype(np.float64) / bc1
        v_hat = v32.astype(np.float64) / bc2
        update = cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        params[name] = (params[name].astype(np.float64) - update).astype(np.float32)
    return True
