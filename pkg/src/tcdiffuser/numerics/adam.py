from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

Params = dict[str, np.ndarray]


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Params, **kwargs) -> "AdamState":
        state = cls(**kwargs)
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
        return state

    def clone(self) -> "AdamState":
        return copy.deepcopy(self)


def adam_step(params: Params, grads: Params, state: AdamState) -> Params:
    """One bias-corrected Adam update; returns new arrays and advances ``state``."""
    if set(grads) != set(params):
        raise ValueError("gradient blocks do not match parameter blocks")
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, expected {p.shape}")
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        elif state.m[name].shape != p.shape:
            raise ValueError(f"optimizer state for {name!r} has the wrong shape")

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    out: Params = {}
    for name, p in params.items():
        g = grads[name]
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        out[name] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return out
