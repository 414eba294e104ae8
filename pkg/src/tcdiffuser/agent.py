"""Inverse dynamics, closed-loop planning episodes and the normalized score."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .conditioning import build_eval_condition, history_window
from .data import Dataset, consecutive_pairs, denormalize_states, normalize_states
from .diffusion import GuidanceConfig, sample_sequences
from .envs import EnvSpec, classify_branch, env_step
from .numerics import AdamState, NonFiniteError, Params, Tape, adam_step, ops
from .training import TrainedDenoiser


# --- inverse dynamics ------------------------------------------------------

@dataclass
class InverseDynamics:
    """MLP on normalized ``(s_t, s_{t+1})``; outputs raw actions via ``action_scale``."""

    params: Params
    state_dim: int
    action_dim: int
    action_scale: np.ndarray
    losses: list[float] = field(default_factory=list)

    def __call__(self, pairs: np.ndarray) -> np.ndarray:
        return _mlp(self.params, pairs).value * self.action_scale


def _init_mlp(rng: np.random.Generator, sizes: Sequence[int]) -> Params:
    p: Params = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / math.sqrt(a)
        p[f"l{i}.w"] = rng.uniform(-bound, bound, size=(a, b))
        p[f"l{i}.b"] = rng.uniform(-bound, bound, size=(b,))
    return p


def _mlp(p, x):
    n = len(p) // 2
    h = x
    for i in range(n):
        h = ops.linear(h, p[f"l{i}.w"], p[f"l{i}.b"])
        if i < n - 1:
            h = ops.mish(h)
    return h


def train_inverse_dynamics(dataset: Dataset, epochs: int = 100,
                           rng: Optional[np.random.Generator] = None,
                           batch_size: int = 128, lr: float = 2e-4,
                           hidden: int = 64) -> InverseDynamics:
    """Minimize the mean squared action error over all consecutive state pairs."""
    rng = rng if rng is not None else np.random.default_rng(0)
    x, y = consecutive_pairs(dataset)
    scale = np.abs(y).max(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    target = y / scale
    d_s, d_a = dataset.d_s, dataset.d_a
    params = _init_mlp(rng, (2 * d_s, hidden, hidden, d_a))
    opt = AdamState.for_params(params, lr=lr)
    losses = []
    n = len(x)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            with Tape() as tape:
                w = tape.watch(params)
                loss = ops.masked_mse(_mlp(w, x[idx]), target[idx])
                grads = tape.gradient(loss, w)
            params = adam_step(params, grads, opt)
            losses.append(float(loss.value))
    return InverseDynamics(params, d_s, d_a, scale, losses)


def infer_action(model: InverseDynamics, s_t, s_next) -> np.ndarray:
    """Action for normalized ``s_t -> s_next``; accepts single states or batches."""
    s_t = np.asarray(s_t, dtype=np.float64)
    s_next = np.asarray(s_next, dtype=np.float64)
    if s_t.shape != s_next.shape or s_t.shape[-1] != model.state_dim:
        raise ValueError(f"state pair shapes {s_t.shape}, {s_next.shape} do not match "
                         f"state dimension {model.state_dim}")
    pairs = np.concatenate([s_t, s_next], axis=-1)
    single = pairs.ndim == 1
    out = model(pairs[None] if single else pairs)
    return out[0] if single else out


# --- plan sampling ---------------------------------------------------------

def sample_plans(trained: TrainedDenoiser, cond, n: int, guidance: GuidanceConfig,
                 rng: np.random.Generator, history: Optional[np.ndarray] = None,
                 goal: Optional[np.ndarray] = None) -> np.ndarray:
    """``n`` normalized windows for one condition; inpaints ``history`` only if the
    model's flags use it. Returns (n, L, d_s)."""
    hist = None
    if history is not None and trained.flags.use_historical:
        hist = history_window(history, trained.T_HC)
    shape = (n, trained.L, trained.stats.state_dim)
    return sample_sequences(trained.model, np.asarray(cond, dtype=np.float64), trained.schedule,
                            guidance, rng, shape, hist, goal)


def future_labels(plans: np.ndarray, trained: TrainedDenoiser, spec: EnvSpec, t: int) -> np.ndarray:
    """Oracle class of the generated in-episode future of each plan decided at ``t``."""
    raw = denormalize_states(plans, trained.stats)
    n_future = min(trained.L - trained.T_HC, spec.t_max - (t + 1))
    if n_future < 2:
        raise ValueError(f"fewer than two future states remain after timestep {t}")
    fut = raw[:, trained.T_HC:trained.T_HC + n_future]
    return np.array([classify_branch(f, spec, t + 1).index for f in fut])


# --- closed-loop evaluation ------------------------------------------------

@dataclass
class EpisodeResult:
    total_return: float
    steps: int
    rewards: list[float]
    states: np.ndarray
    actions: np.ndarray
    rtg_initial: float
    rtg_final: float
    start_class: int = 0
    aborted: Optional[str] = None
    plans: Optional[np.ndarray] = None   # (steps, L, d_s) raw-space generated windows
    conditions: Optional[np.ndarray] = None  # (steps, 3)


def evaluate_episodes(trained: TrainedDenoiser, inverse: InverseDynamics, spec: EnvSpec,
                      profile: np.ndarray, guidance: GuidanceConfig, n_episodes: int,
                      max_return_offset: float = 0.0,
                      rng: Optional[np.random.Generator] = None,
                      start_classes: Optional[Sequence[int]] = None,
                      return_target: Optional[float] = None,
                      record_plans: bool = False) -> list[EpisodeResult]:
    """Run episodes in lock-step, replanning every environment step.

    Each step builds the condition from the remaining return-to-go, samples one
    window per episode, decodes the action from the true current state and the
    first generated state (index T_HC), and subtracts the observed reward.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    stats, flags, T_HC = trained.stats, trained.flags, trained.T_HC
    if start_classes is None:
        start_classes = [i % spec.n_classes for i in range(n_episodes)]
    if len(start_classes) != n_episodes:
        raise ValueError("need one start class per episode")
    rtg0 = stats.T_max + max_return_offset
    target = rtg0 if return_target is None else return_target

    states = [[spec.start_state(c)] for c in start_classes]
    actions: list[list[np.ndarray]] = [[] for _ in range(n_episodes)]
    rewards: list[list[float]] = [[] for _ in range(n_episodes)]
    totals = [0.0] * n_episodes
    rtg = [rtg0] * n_episodes
    aborted: list[Optional[str]] = [None] * n_episodes
    plans_log: list[list[np.ndarray]] = [[] for _ in range(n_episodes)]
    cond_log: list[list[np.ndarray]] = [[] for _ in range(n_episodes)]

    for t in range(stats.t_max):
        live = [i for i in range(n_episodes) if aborted[i] is None and len(rewards[i]) == t]
        if not live:
            break
        conds, hists = [], []
        for i in live:
            recent = normalize_states(np.array(states[i][-T_HC:]), stats)
            c = build_eval_condition(profile, rtg[i], t, stats, flags, recent, T_HC,
                                     return_target=target)
            conds.append(c.vector())
            hists.append(c.history)
        shape = (len(live), trained.L, stats.state_dim)
        hist = np.stack(hists) if flags.use_historical else None
        plans = sample_sequences(trained.model, np.stack(conds), trained.schedule, guidance,
                                 rng, shape, hist)
        s_now = normalize_states(np.array([states[i][-1] for i in live]), stats)
        acts = infer_action(inverse, s_now, plans[:, T_HC])
        raw_plans = denormalize_states(plans, stats) if record_plans else None
        for j, i in enumerate(live):
            a = acts[j]
            if not np.isfinite(a).all():
                aborted[i] = f"non-finite action at timestep {t}: {a.tolist()}"
                continue
            s_next, r = env_step(spec, states[i][-1], a)
            states[i].append(s_next)
            actions[i].append(a)
            rewards[i].append(r)
            totals[i] += r
            rtg[i] -= r
            cond_log[i].append(conds[j])
            if record_plans:
                plans_log[i].append(raw_plans[j])

    out = []
    for i in range(n_episodes):
        out.append(EpisodeResult(
            total_return=totals[i], steps=len(rewards[i]), rewards=rewards[i],
            states=np.array(states[i]), actions=np.array(actions[i]).reshape(-1, spec.d_a),
            rtg_initial=rtg0, rtg_final=rtg[i], start_class=int(start_classes[i]),
            aborted=aborted[i],
            plans=np.array(plans_log[i]) if record_plans else None,
            conditions=np.array(cond_log[i]).reshape(-1, 3)))
    return out


def evaluate_episode(trained: TrainedDenoiser, inverse: InverseDynamics, spec: EnvSpec,
                     profile: np.ndarray, guidance: GuidanceConfig,
                     max_return_offset: float = 0.0,
                     rng: Optional[np.random.Generator] = None, start_class: int = 0,
                     **kwargs) -> EpisodeResult:
    return evaluate_episodes(trained, inverse, spec, profile, guidance, 1, max_return_offset,
                             rng, [start_class], **kwargs)[0]


# --- metric ----------------------------------------------------------------

def normalized_score(values, omega: float = 10.0) -> np.ndarray:
    """Map a set of method results linearly onto ``[0, omega]``."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ValueError("need at least two values to normalize")
    lo, hi = v.min(), v.max()
    if hi == lo:
        raise ValueError("all values are equal; normalized score is undefined")
    return omega * (v - lo) / (hi - lo)


__all__ = ["EpisodeResult", "InverseDynamics", "NonFiniteError", "evaluate_episode",
           "evaluate_episodes", "future_labels", "infer_action", "normalized_score",
           "sample_plans", "train_inverse_dynamics"]
