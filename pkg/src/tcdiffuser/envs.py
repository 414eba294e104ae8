"""Three 2-D toy environments whose trajectory classes need a specific temporal condition.

Every episode has 2h transitions.  Templates hold 2h + 1 points so that the
last action also has a target state; a trajectory stores the first 2h states.
Actions are exact state deltas.

* historical: three approaches to the origin (from 90, 135 and 180 degrees),
  each continuing along its own outgoing branch (30, 0 and -30 degrees).
* immediate: one approach from 180 degrees; HIGH leaves at +30 degrees and is
  paid 10 for the junction action, LOW leaves at -30 degrees and is paid the
  same amount back over its last five steps.
* prospective: two mirrored rays from the origin; U is paid 0 then 1 per
  step, D is paid 1 then 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, EnvInfo, Trajectory, make_dataset

STEP = 0.05
TAIL = 5
JUNCTION_REWARD = 10.0


@dataclass(frozen=True)
class EnvSpec:
    kind: str
    h: int
    sigma: float
    templates: np.ndarray       # (n_classes, 2h + 1, 2)
    rewards: np.ndarray         # (n_classes, 2h)
    class_names: tuple[str, ...]
    anchor: int                 # template index shared exactly by all classes
    future_start: int           # first template index after the shared part

    d_s: int = 2
    d_a: int = 2

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def t_max(self) -> int:
        return 2 * self.h

    def start_state(self, cls: int = 0) -> np.ndarray:
        return self.templates[cls, 0].copy()


@dataclass(frozen=True)
class BranchLabel:
    index: int
    name: str


def _unit(deg: float) -> np.ndarray:
    r = math.radians(deg)
    return np.array([math.cos(r), math.sin(r)])


def _junction_path(h: int, incoming_deg: float, outgoing_deg: float) -> np.ndarray:
    pts = np.zeros((2 * h + 1, 2))
    for i in range(h):
        pts[i] = (h - 1 - i) * STEP * _unit(incoming_deg)
    for j in range(1, h + 2):
        pts[h - 1 + j] = j * STEP * _unit(outgoing_deg)
    return pts


def make_env(kind: str, h: int = 10, sigma: float = 0.01) -> EnvSpec:
    if h < 5:
        raise ValueError(f"half length h must be >= 5, got {h}")
    if sigma < 0:
        raise ValueError("jitter sigma must be >= 0")
    n = 2 * h
    if kind == "historical":
        pairs = [(90.0, 30.0), (135.0, 0.0), (180.0, -30.0)]
        templates = np.stack([_junction_path(h, a, b) for a, b in pairs])
        rewards = np.ones((3, n))
        names = ("from-90", "from-135", "from-180")
        return EnvSpec(kind, h, sigma, templates, rewards, names, h - 1, h)
    if kind == "immediate":
        templates = np.stack([_junction_path(h, 180.0, 30.0), _junction_path(h, 180.0, -30.0)])
        rewards = np.ones((2, n))
        rewards[0, h - 1], rewards[1, h - 1] = JUNCTION_REWARD, 0.0
        rewards[0, n - TAIL:] = 0.0
        _balance_tail(rewards)
        return EnvSpec(kind, h, sigma, templates, rewards, ("high", "low"), h - 1, h)
    if kind == "prospective":
        ray = np.arange(n + 1)[:, None] * STEP * _unit(30.0)[None, :]
        down = ray * np.array([1.0, -1.0])
        templates = np.stack([ray, down])
        rewards = np.zeros((2, n))
        rewards[0, h:] = 1.0
        rewards[1, :h] = 1.0
        return EnvSpec(kind, h, sigma, templates, rewards, ("U", "D"), 0, 0)
    raise ValueError(f"unknown env kind {kind!r}")


def _balance_tail(rewards: np.ndarray) -> None:
    """Spread LOW's compensation over the tail so both episode returns match."""
    gap = rewards[0].sum() - rewards[1, :-TAIL].sum()
    rewards[1, -TAIL:] = gap / TAIL


def generate_dataset(spec: EnvSpec, n: int, rng: np.random.Generator) -> Dataset:
    if n <= 0 or n % spec.n_classes:
        raise ValueError(f"n={n} must be a positive multiple of {spec.n_classes} for {spec.kind}")
    trajs = []
    for i in range(n):
        c = i % spec.n_classes
        pts = spec.templates[c] + rng.normal(0.0, spec.sigma, size=spec.templates[c].shape)
        pts[spec.anchor] = spec.templates[c, spec.anchor]
        trajs.append(Trajectory(pts[:-1], np.diff(pts, axis=0), spec.rewards[c].copy(), i, c))
    return make_dataset(trajs, t_max=spec.t_max, return_basis="rtg",
                        env=EnvInfo(spec.kind, spec.h, spec.sigma))


def generate_historical_dataset(n: int = 600, h: int = 10, sigma: float = 0.01,
                                rng: np.random.Generator | None = None) -> Dataset:
    return generate_dataset(make_env("historical", h, sigma), n, _rng(rng))


def generate_immediate_dataset(n: int = 600, h: int = 10, sigma: float = 0.01,
                               rng: np.random.Generator | None = None) -> Dataset:
    return generate_dataset(make_env("immediate", h, sigma), n, _rng(rng))


def generate_prospective_dataset(n: int = 600, h: int = 10, sigma: float = 0.01,
                                 rng: np.random.Generator | None = None) -> Dataset:
    return generate_dataset(make_env("prospective", h, sigma), n, _rng(rng))


def _rng(rng):
    return rng if rng is not None else np.random.default_rng(0)


def env_for_dataset(dataset: Dataset) -> EnvSpec:
    if not dataset.env.kind:
        raise ValueError("dataset carries no environment description")
    return make_env(dataset.env.kind, dataset.env.h, dataset.env.sigma)


def nearest_template_point(spec: EnvSpec, s: np.ndarray) -> tuple[int, int]:
    d = ((spec.templates - np.asarray(s)[None, None, :]) ** 2).sum(axis=-1)
    flat = int(np.argmin(d))  # class-major order: ties go to the lowest class
    return divmod(flat, d.shape[1])


def env_step(spec: EnvSpec, s, a) -> tuple[np.ndarray, float]:
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if s.shape != (spec.d_s,) or a.shape != (spec.d_a,):
        raise ValueError("state and action must both have dimension 2")
    nxt = s + a
    c, j = nearest_template_point(spec, nxt)
    return nxt, float(spec.rewards[c, max(j - 1, 0)])


def template_distances(states, spec: EnvSpec, start: int | None = None) -> np.ndarray:
    """Mean squared distance of a raw-space window to every class template.

    ``states[i]`` is compared with template index ``start + i``; indices past
    the template end use its last point.
    """
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or len(states) < 2:
        raise ValueError("classification needs a window of at least two states")
    start = spec.future_start if start is None else start
    idx = np.minimum(np.arange(start, start + len(states)), spec.templates.shape[1] - 1)
    ref = spec.templates[:, idx]
    return ((ref - states[None]) ** 2).sum(axis=-1).mean(axis=-1)


def classify_branch(states, spec: EnvSpec, start: int | None = None) -> BranchLabel:
    """Nearest class template by mean squared distance; ties go to the lowest index."""
    c = int(np.argmin(template_distances(states, spec, start)))
    return BranchLabel(c, spec.class_names[c])


class ToyEnv:
    """Stateful rollout wrapper around :func:`env_step`."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.t = 0
        self.state = spec.start_state()

    def reset(self, cls: int = 0) -> np.ndarray:
        self.t = 0
        self.state = self.spec.start_state(cls)
        return self.state.copy()

    def step(self, a) -> tuple[np.ndarray, float, bool]:
        self.state, r = env_step(self.spec, self.state, a)
        self.t += 1
        return self.state.copy(), r, self.t >= self.spec.t_max
