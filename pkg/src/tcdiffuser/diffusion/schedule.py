from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Arrays indexed so that ``alpha[k]`` is step k; index 0 of alpha/beta is unused."""

    kind: str
    K: int
    alpha: np.ndarray          # (K+1,), alpha[0] = 1
    beta: np.ndarray           # (K+1,), beta[0] = 0
    alpha_bar: np.ndarray      # (K+1,), alpha_bar[0] = 1
    posterior_var: np.ndarray  # (K+1,), posterior_var[0] = 0

    def check_step(self, k: int) -> None:
        if not 1 <= k <= self.K:
            raise ValueError(f"diffusion step {k} outside 1..{self.K}")


def schedule_from_alphas(alphas, kind: str = "custom") -> NoiseSchedule:
    a = np.asarray(alphas, dtype=np.float64)
    if a.ndim != 1 or a.size < 1:
        raise ValueError("need at least one step")
    if not ((a > 0) & (a < 1)).all():
        raise ValueError("alphas must lie in (0, 1)")
    alpha = np.concatenate([[1.0], a])
    # alpha is fixed first so that alpha + beta == 1 holds exactly in floating point
    beta = 1.0 - alpha
    alpha_bar = np.cumprod(alpha)
    one_minus = 1.0 - alpha_bar
    post = np.zeros_like(alpha)
    post[1:] = (one_minus[:-1] / one_minus[1:]) * beta[1:]
    return NoiseSchedule(kind, a.size, alpha, beta, alpha_bar, post)


def make_schedule(K: int = 200, kind: str = "cosine") -> NoiseSchedule:
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if kind == "cosine":
        s = 0.008
        t = np.arange(K + 1, dtype=np.float64) / K
        f = np.cos((t + s) / (1 + s) * math.pi / 2) ** 2
        alphas = np.clip(f[1:] / f[:-1], 1e-3, 1 - 1e-6)
    elif kind == "linear":
        scale = 1000.0 / K
        betas = np.linspace(scale * 1e-4, scale * 2e-2, K)
        alphas = 1.0 - np.clip(betas, 1e-6, 0.999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    return schedule_from_alphas(alphas, kind)
