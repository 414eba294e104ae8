"""Forward noising, the denoising loss, guided noise and the reverse sampler."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..numerics import NonFiniteError, Params, Tape, ops
from .denoiser import COND_DIM, UnetConfig, apply_unet
from .schedule import NoiseSchedule

NoiseModel = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GuidanceConfig:
    omega: float = 1.2
    condition_dropout_p: float = 0.25
    clip_x0: bool = True
    # "std" adds sqrt(posterior_var) * z; "variance" adds posterior_var * z
    noise_scale: str = "std"

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError(f"guidance scale must be >= 0, got {self.omega}")
        if not 0.0 <= self.condition_dropout_p <= 1.0:
            raise ValueError("condition dropout probability must lie in [0, 1]")
        if self.noise_scale not in ("std", "variance"):
            raise ValueError(f"unknown noise scale {self.noise_scale!r}")


def _steps(k, n: int, sched: NoiseSchedule) -> np.ndarray:
    k = np.broadcast_to(np.asarray(k, dtype=np.int64), (n,))
    if k.min() < 1 or k.max() > sched.K:
        raise ValueError(f"diffusion steps must lie in 1..{sched.K}")
    return k


def _per_sample(v: np.ndarray, ndim: int) -> np.ndarray:
    return v.reshape(v.shape + (1,) * (ndim - 1))


def forward_noise(tau0, k, eps, sched: NoiseSchedule) -> np.ndarray:
    """``sqrt(abar_k) * tau0 + sqrt(1 - abar_k) * eps`` with one step per leading row."""
    tau0 = np.asarray(tau0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if tau0.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} does not match {tau0.shape}")
    if np.ndim(k) == 0:
        sched.check_step(int(k))
        ab = sched.alpha_bar[int(k)]
        return np.sqrt(ab) * tau0 + np.sqrt(1.0 - ab) * eps
    ks = _steps(k, tau0.shape[0], sched)
    ab = _per_sample(sched.alpha_bar[ks], tau0.ndim)
    return np.sqrt(ab) * tau0 + np.sqrt(1.0 - ab) * eps


def known_mask(batch: int, L: int, T_HC: int, goal: bool = False) -> np.ndarray:
    """Positions overwritten by inpainting: the history slots and optionally the last one."""
    m = np.zeros((batch, L), dtype=bool)
    m[:, :T_HC] = True
    if goal:
        m[:, -1] = True
    return m


def loss_var(cfg: UnetConfig, params, tau0, cond, k, eps, sched: NoiseSchedule,
             known: Optional[np.ndarray] = None, mask_known: bool = True):
    """Denoising MSE as a tape value.

    Positions flagged in ``known`` (B, L) hold the clean states in the noised
    input; with ``mask_known`` they are also left out of the average.
    """
    tau0 = np.asarray(tau0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if tau0.ndim != 3 or tau0.shape != eps.shape:
        raise ValueError(f"tau0 {tau0.shape} and eps {eps.shape} must be equal (B, L, d) arrays")
    ks = _steps(k, tau0.shape[0], sched)
    xk = forward_noise(tau0, ks, eps, sched)
    weight = None
    if known is not None:
        known = np.asarray(known, dtype=bool)
        if known.shape != tau0.shape[:2]:
            raise ValueError(f"known mask {known.shape} must be {tau0.shape[:2]}")
        xk = np.where(known[..., None], tau0, xk)
        if mask_known:
            weight = (~known)[..., None].astype(np.float64)
    pred = apply_unet(cfg, params, xk, cond, ks)
    return ops.masked_mse(pred, eps, weight)


def training_loss(cfg: UnetConfig, params: Params, tau0, cond, k, eps,
                  sched: NoiseSchedule, known: Optional[np.ndarray] = None,
                  mask_known: bool = True) -> tuple[float, dict[str, np.ndarray]]:
    with Tape() as tape:
        watched = tape.watch(params)
        loss = loss_var(cfg, watched, tau0, cond, k, eps, sched, known, mask_known)
        grads = tape.gradient(loss, watched)
    value = float(loss.value)
    if not np.isfinite(value):
        raise NonFiniteError("training loss is not finite")
    return value, grads


def condition_rows(cond, batch: int) -> np.ndarray:
    """Accept a TemporalCondition, a (3,) vector or a (B, 3) matrix."""
    if hasattr(cond, "vector"):
        cond = cond.vector()
    cond = np.asarray(cond, dtype=np.float64)
    if cond.shape == (COND_DIM,):
        cond = np.broadcast_to(cond, (batch, COND_DIM))
    if cond.shape != (batch, COND_DIM):
        raise ValueError(f"condition shape {cond.shape} != ({batch}, {COND_DIM})")
    return cond


def guided_noise(model: NoiseModel, x, cond, k, omega: float) -> np.ndarray:
    """``eps_null + omega * (eps_cond - eps_null)``.

    The two passes run separately so that omega = 1 and omega = 0 reproduce the
    single-condition predictions exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    cond = condition_rows(cond, x.shape[0])
    if omega == 1.0:
        return model(x, cond, k)
    null = np.zeros_like(cond)
    eps_null = model(x, null, k)
    if omega == 0.0 or not cond.any():
        return eps_null
    eps_cond = model(x, cond, k)
    return eps_null + omega * (eps_cond - eps_null)


def predict_x0(xk, eps, k: int, sched: NoiseSchedule, clip: bool = True) -> np.ndarray:
    sched.check_step(k)
    ab = sched.alpha_bar[k]
    x0 = (np.asarray(xk) - np.sqrt(1.0 - ab) * np.asarray(eps)) / np.sqrt(ab)
    return np.clip(x0, -1.0, 1.0) if clip else x0


def posterior_coefficients(k: int, sched: NoiseSchedule) -> tuple[float, float]:
    """Weights on (x0, x_k) in the mean of q(x_{k-1} | x_k, x0)."""
    sched.check_step(k)
    ab, ab_prev = sched.alpha_bar[k], sched.alpha_bar[k - 1]
    denom = 1.0 - ab
    return (np.sqrt(ab_prev) * sched.beta[k] / denom,
            np.sqrt(sched.alpha[k]) * (1.0 - ab_prev) / denom)


def denoise_step(xk, eps, k: int, sched: NoiseSchedule, z, cfg: GuidanceConfig) -> np.ndarray:
    x0 = predict_x0(xk, eps, k, sched, cfg.clip_x0)
    c0, ck = posterior_coefficients(k, sched)
    mean = c0 * x0 + ck * np.asarray(xk)
    var = sched.posterior_var[k]
    scale = np.sqrt(var) if cfg.noise_scale == "std" else var
    if scale == 0.0:
        return mean
    return mean + scale * np.asarray(z)


def _inpaint(x: np.ndarray, history: Optional[np.ndarray], goal: Optional[np.ndarray]):
    if history is not None:
        x[:, :history.shape[1]] = history
    if goal is not None:
        x[:, -1] = goal
    return x


def sample_sequences(model: NoiseModel, cond, sched: NoiseSchedule, cfg: GuidanceConfig,
                     rng: np.random.Generator, shape: tuple[int, int, int],
                     history: Optional[np.ndarray] = None,
                     goal: Optional[np.ndarray] = None,
                     zero_noise: bool = False) -> np.ndarray:
    """Run the guided reverse chain for a batch of windows.

    ``history`` is (B, T_HC, d) of already padded windows and ``goal`` (B, d);
    both are written into the iterate before every step and after the last one.
    ``zero_noise`` drops the per-step noise z, leaving only the initial draw.
    """
    bsz, L, d = shape
    cond = condition_rows(cond, bsz)
    if history is not None:
        history = np.broadcast_to(np.asarray(history, dtype=np.float64), (bsz,) + np.shape(history)[-2:])
        if history.shape[1] >= L or history.shape[2] != d:
            raise ValueError(f"history {history.shape} does not fit windows of shape {shape}")
    if goal is not None:
        goal = np.broadcast_to(np.asarray(goal, dtype=np.float64), (bsz, d))
    x = rng.standard_normal(shape)
    for k in range(sched.K, 0, -1):
        x = _inpaint(x, history, goal)
        eps = guided_noise(model, x, cond, np.full(bsz, k), cfg.omega)
        z = rng.standard_normal(shape) if k > 1 and not zero_noise else np.zeros(shape)
        x = denoise_step(x, eps, k, sched, z, cfg)
    return _inpaint(x, history, goal)


def sample_sequence(model: NoiseModel, cond, sched: NoiseSchedule, cfg: GuidanceConfig,
                    rng: np.random.Generator, L: int, state_dim: int) -> np.ndarray:
    """One (L, d_s) window from a :class:`TemporalCondition`.

    The history window is inpainted only when the condition's flags enable it.
    """
    use_hist = getattr(cond.flags, "use_historical", True)
    hist = cond.history[None] if use_hist else None
    goal = None if cond.goal_state is None else np.asarray(cond.goal_state)[None]
    return sample_sequences(model, cond.vector()[None], sched, cfg, rng, (1, L, state_dim),
                            hist, goal)[0]


class NoiseOracle:
    """Predicts the exact noise that maps the current iterate back to ``tau0``.

    With this model and z = 0 the reverse chain reproduces ``tau0``.
    """

    def __init__(self, tau0: np.ndarray, sched: NoiseSchedule):
        self.tau0 = np.asarray(tau0, dtype=np.float64)
        self.sched = sched

    def __call__(self, x, cond, k) -> np.ndarray:
        k = int(np.asarray(k).reshape(-1)[0])
        ab = self.sched.alpha_bar[k]
        return (np.asarray(x) - np.sqrt(ab) * self.tau0) / np.sqrt(1.0 - ab)
