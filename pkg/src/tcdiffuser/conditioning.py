"""Temporal condition construction: return-to-go, history windows, reward profiles."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

if TYPE_CHECKING:
    from .data import Dataset, SegmentBatch, Trajectory


class DegenerateRangeError(ValueError):
    """A normalization range has zero width."""


@dataclass(frozen=True)
class DatasetStats:
    T_min: float
    T_max: float
    r_min: float
    r_max: float
    state_min: np.ndarray
    state_max: np.ndarray
    t_max: int
    # "episode": range of episode returns; "rtg": range of every return-to-go value
    return_basis: str = "episode"

    def __post_init__(self):
        if self.T_max < self.T_min or self.r_max < self.r_min:
            raise ValueError("stats ranges must satisfy max >= min")
        if np.any(np.asarray(self.state_max) < np.asarray(self.state_min)):
            raise ValueError("state_max must be >= state_min per dimension")
        if self.return_basis not in ("episode", "rtg"):
            raise ValueError(f"unknown return basis {self.return_basis!r}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, DatasetStats):
            return NotImplemented
        return (self.T_min == other.T_min and self.T_max == other.T_max
                and self.r_min == other.r_min and self.r_max == other.r_max
                and self.t_max == other.t_max and self.return_basis == other.return_basis
                and np.array_equal(self.state_min, other.state_min)
                and np.array_equal(self.state_max, other.state_max))

    @property
    def state_dim(self) -> int:
        return len(self.state_min)


@dataclass(frozen=True)
class AblationFlags:
    """Which temporal conditions are active.

    ``return_only`` replaces the return-to-go/timestep pair by a fixed episode
    return with no time index, the way a return-conditioned diffuser is guided.
    ``raw_rtg`` feeds the un-normalized return-to-go.
    """

    use_historical: bool = True
    use_immediate: bool = True
    use_prospective: bool = True
    use_timestep: bool = True
    return_only: bool = False
    raw_rtg: bool = False


PRESETS: dict[str, AblationFlags] = {
    "tcd": AblationFlags(True, True, True),
    "rtg-ts": AblationFlags(False, False, True),
    "hc-rtg-ts": AblationFlags(True, False, True),
    "far-rtg-ts": AblationFlags(False, True, True),
    "return-only": AblationFlags(False, False, True, use_timestep=False, return_only=True),
    "unconditional": AblationFlags(False, False, False),
}


def parse_flags(spec: str) -> list[tuple[str, AblationFlags]]:
    """Parse ``"tcd|rtg-ts"`` into named flag sets."""
    out = []
    for name in spec.split("|"):
        name = name.strip().lower()
        if name not in PRESETS:
            raise ValueError(f"unknown flag preset {name!r}; known: {', '.join(PRESETS)}")
        out.append((name, PRESETS[name]))
    return out


def preset_name(flags: AblationFlags) -> str:
    for name, f in PRESETS.items():
        if f == flags:
            return name
    return "custom"


@dataclass
class TemporalCondition:
    immediate_reward: float
    rtg: float
    timestep: float
    history: np.ndarray
    goal_state: Optional[np.ndarray] = None
    flags: AblationFlags = field(default_factory=AblationFlags)

    def vector(self) -> np.ndarray:
        f = self.flags
        return np.array([
            self.immediate_reward if f.use_immediate else 0.0,
            self.rtg if f.use_prospective else 0.0,
            self.timestep if (f.use_prospective and f.use_timestep and not f.return_only) else 0.0,
        ])

    @property
    def history_len(self) -> int:
        return self.history.shape[0]


def compute_rtg(traj: "Trajectory", t: int) -> float:
    r = traj.rewards
    if not 0 <= t < len(r):
        raise IndexError(f"timestep {t} outside episode of length {len(r)}")
    return float(r[t:].sum())


def rtg_table(rewards: np.ndarray) -> np.ndarray:
    """Suffix sums ``rtg[t] = sum(rewards[t:])``."""
    return np.cumsum(np.asarray(rewards, dtype=np.float64)[::-1])[::-1]


def normalize_rtg(raw, stats: DatasetStats):
    if stats.T_max == stats.T_min:
        raise DegenerateRangeError(
            f"return range is degenerate (T_min == T_max == {stats.T_max})")
    return (np.asarray(raw, dtype=np.float64) - stats.T_min) / (stats.T_max - stats.T_min)


def normalize_reward(r, stats: DatasetStats):
    """Min-max reward scaling; a constant-reward dataset maps to 0."""
    r = np.asarray(r, dtype=np.float64)
    if stats.r_max == stats.r_min:
        return np.zeros_like(r)
    return (r - stats.r_min) / (stats.r_max - stats.r_min)


def top_y_reward_profile(dataset: "Dataset", Y: int, normalize: bool = True) -> np.ndarray:
    trajs = dataset.trajectories
    if not trajs:
        raise ValueError("empty dataset")
    if not 1 <= Y <= len(trajs):
        raise ValueError(f"top-Y must be in 1..{len(trajs)}, got {Y}")
    returns = np.array([t.episode_return for t in trajs])
    # stable sort on -return keeps ascending index order among ties
    order = np.argsort(-returns, kind="stable")[:Y]
    chosen = [trajs[i].rewards for i in order]
    n = min(len(r) for r in chosen)
    profile = np.mean([r[:n] for r in chosen], axis=0)
    return normalize_reward(profile, dataset.stats) if normalize else profile


def history_window(recent: np.ndarray, T_HC: int) -> np.ndarray:
    """Left-pad the most recent states with zero states to exactly ``T_HC`` rows."""
    recent = np.asarray(recent, dtype=np.float64)
    if recent.ndim != 2 or recent.shape[0] < 1:
        raise ValueError("history needs at least the current state")
    recent = recent[-T_HC:]
    out = np.zeros((T_HC, recent.shape[1]))
    out[T_HC - recent.shape[0]:] = recent
    return out


def inpaint_history(seq: np.ndarray, history: np.ndarray, t: int, T_HC: int) -> np.ndarray:
    """Overwrite the first ``T_HC`` positions with ``[0..., s_{t-m+1}, ..., s_t]``.

    ``history`` holds the most recent true states ending at s_t (at most
    ``t + 1`` of them, padded or not); ``seq`` is (L, d) or (B, L, d).
    """
    seq = np.asarray(seq, dtype=np.float64)
    if T_HC >= seq.shape[-2]:
        raise ValueError(f"T_HC={T_HC} must be smaller than the window length {seq.shape[-2]}")
    history = np.asarray(history, dtype=np.float64)
    if history.shape[0] > t + 1 and history.shape[0] != T_HC:
        raise ValueError(f"at timestep {t} at most {t + 1} history states exist")
    window = history_window(history[-(t + 1):], T_HC)
    out = seq.copy()
    out[..., :T_HC, :] = window
    return out


def inpaint_goal(seq: np.ndarray, goal: np.ndarray) -> np.ndarray:
    seq = np.asarray(seq, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    if goal.shape != (seq.shape[-1],):
        raise ValueError(f"goal has shape {goal.shape}, states have dimension {seq.shape[-1]}")
    out = seq.copy()
    out[..., -1, :] = goal
    return out


def drop_condition(cond: TemporalCondition, p: float, rng: np.random.Generator) -> TemporalCondition:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1]")
    if p > 0.0 and rng.random() < p:
        return dataclasses.replace(cond, immediate_reward=0.0, rtg=0.0, timestep=0.0)
    return cond


def drop_mask(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean rows to replace by the null condition during training."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1]")
    return rng.random(n) < p


def _rtg_input(raw, stats: DatasetStats, flags: AblationFlags):
    return np.asarray(raw, dtype=np.float64) if flags.raw_rtg else normalize_rtg(raw, stats)


def train_condition_matrix(batch: "SegmentBatch", stats: DatasetStats,
                           flags: AblationFlags) -> np.ndarray:
    """Per-window condition rows ``[immediate reward, RTG, timestep]`` for training."""
    n = len(batch.rtg_raw)
    cond = np.zeros((n, 3))
    if flags.use_immediate:
        cond[:, 0] = normalize_reward(batch.first_reward_raw, stats)
    if flags.use_prospective:
        if flags.return_only:
            cond[:, 1] = _rtg_input(batch.episode_return, stats, flags)
        else:
            cond[:, 1] = _rtg_input(batch.rtg_raw, stats, flags)
            if flags.use_timestep:
                cond[:, 2] = batch.start_timestep / stats.t_max
    return cond


def build_eval_condition(profile: np.ndarray, rtg_remaining: float, t: int,
                         stats: DatasetStats, flags: AblationFlags,
                         history: np.ndarray | None = None, T_HC: int = 5,
                         return_target: float | None = None,
                         goal_state: np.ndarray | None = None) -> TemporalCondition:
    """Condition for environment timestep ``t``.

    ``history`` holds the recent normalized true states ending at s_t.
    ``return_target`` is the fixed return used when ``flags.return_only``.
    """
    profile = np.asarray(profile, dtype=np.float64)
    ir = float(profile[min(t, len(profile) - 1)]) if profile.size and flags.use_immediate else 0.0
    if not flags.use_prospective:
        rtg = 0.0
    elif flags.return_only:
        target = stats.T_max if return_target is None else return_target
        rtg = float(_rtg_input(max(target, 0.0), stats, flags))
    else:
        rtg = float(_rtg_input(max(rtg_remaining, 0.0), stats, flags))
    if history is None:
        hist = np.zeros((T_HC, stats.state_dim))
    else:
        hist = history_window(history, T_HC)
    return TemporalCondition(ir, rtg, t / stats.t_max, hist, goal_state, flags)
