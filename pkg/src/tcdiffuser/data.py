"""Trajectory storage, windowing, normalization and the on-disk dataset format.

Binary layout (little-endian)::

    magic      8 bytes   b"TCDDATA\\0"
    version    u32
    d_s, d_a   u32, u32
    n_traj     u32
    t_max      u32
    env_kind   u8  (0 none, 1 historical, 2 immediate, 3 prospective)
    basis      u8  (0 episode, 1 rtg)
    reserved   u16
    env_h      u32
    env_sigma  f64
    T_min, T_max, r_min, r_max               4 x f64
    state_min, state_max                     2 x d_s x f64
    per trajectory:
        id i64, label i32, length u32
        states  length x d_s f64
        actions length x d_a f64
        rewards length f64
    crc32      u32 over every preceding byte
"""
from __future__ import annotations

import csv
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .conditioning import DatasetStats, rtg_table

MAGIC = b"TCDDATA\0"
VERSION = 1
ENV_KINDS = ("", "historical", "immediate", "prospective")
_HEADER = struct.Struct("<8sIIIIIBBHId")
_STATS = struct.Struct("<4d")
_TRAJ = struct.Struct("<qiI")


class DatasetFormatError(ValueError):
    """The file is not a dataset file."""


class DatasetVersionError(DatasetFormatError):
    pass


class DatasetTruncatedError(DatasetFormatError):
    pass


class DatasetChecksumError(DatasetFormatError):
    pass


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    id: int = 0
    label: int = -1

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        n = len(self.rewards)
        if self.states.ndim != 2 or self.actions.ndim != 2 or self.rewards.ndim != 1:
            raise ValueError("states/actions must be 2-D and rewards 1-D")
        if len(self.states) != n or len(self.actions) != n:
            raise ValueError("states, actions and rewards must have equal length")

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())


@dataclass
class EnvInfo:
    kind: str = ""
    h: int = 0
    sigma: float = 0.0


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    stats: DatasetStats
    env: EnvInfo = field(default_factory=EnvInfo)

    @property
    def d_s(self) -> int:
        return self.trajectories[0].states.shape[1]

    @property
    def d_a(self) -> int:
        return self.trajectories[0].actions.shape[1]

    @property
    def t_max(self) -> int:
        return self.stats.t_max

    def __len__(self) -> int:
        return len(self.trajectories)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset) or len(self) != len(other):
            return NotImplemented if not isinstance(other, Dataset) else False
        if self.stats != other.stats or self.env != other.env:
            return False
        for a, b in zip(self.trajectories, other.trajectories):
            if (a.id, a.label) != (b.id, b.label):
                return False
            if not (np.array_equal(a.states, b.states) and np.array_equal(a.actions, b.actions)
                    and np.array_equal(a.rewards, b.rewards)):
                return False
        return True


def fit_stats(trajectories: Sequence[Trajectory], t_max: int | None = None,
              return_basis: str = "episode") -> DatasetStats:
    """Freeze normalization statistics from a trajectory collection.

    With ``return_basis="rtg"`` the return range spans every return-to-go value
    instead of only the episode returns.
    """
    if not trajectories:
        raise ValueError("cannot fit statistics on an empty dataset")
    if return_basis == "episode":
        returns = np.array([t.episode_return for t in trajectories])
    elif return_basis == "rtg":
        returns = np.concatenate([rtg_table(t.rewards) for t in trajectories])
    else:
        raise ValueError(f"unknown return basis {return_basis!r}")
    rewards = np.concatenate([t.rewards for t in trajectories])
    states = np.concatenate([t.states for t in trajectories])
    return DatasetStats(
        T_min=float(returns.min()), T_max=float(returns.max()),
        r_min=float(rewards.min()), r_max=float(rewards.max()),
        state_min=states.min(axis=0), state_max=states.max(axis=0),
        t_max=int(t_max if t_max is not None else max(len(t) for t in trajectories)),
        return_basis=return_basis,
    )


def make_dataset(trajectories: Sequence[Trajectory], t_max: int | None = None,
                 return_basis: str = "episode", env: EnvInfo | None = None) -> Dataset:
    trajs = list(trajectories)
    return Dataset(trajs, fit_stats(trajs, t_max, return_basis), env or EnvInfo())


def _state_scale(stats: DatasetStats):
    lo = np.asarray(stats.state_min, dtype=np.float64)
    hi = np.asarray(stats.state_max, dtype=np.float64)
    half = (hi - lo) / 2.0
    mid = (hi + lo) / 2.0
    ok = half > 0
    return mid, np.where(ok, half, 1.0), ok


def normalize_states(states, stats: DatasetStats) -> np.ndarray:
    """Per-dimension map of [state_min, state_max] onto [-1, 1]; flat dims map to 0."""
    states = np.asarray(states, dtype=np.float64)
    if states.shape[-1] != stats.state_dim:
        raise ValueError(f"states have dimension {states.shape[-1]}, stats {stats.state_dim}")
    mid, half, ok = _state_scale(stats)
    return np.where(ok, (states - mid) / half, 0.0)


def denormalize_states(states, stats: DatasetStats) -> np.ndarray:
    states = np.asarray(states, dtype=np.float64)
    if states.shape[-1] != stats.state_dim:
        raise ValueError(f"states have dimension {states.shape[-1]}, stats {stats.state_dim}")
    mid, half, ok = _state_scale(stats)
    return np.where(ok, states * half + mid, mid)


@dataclass(frozen=True)
class Window:
    """A training window centred on decision timestep ``t``.

    The window covers episode indices ``t - history + 1 .. t - history + L``;
    indices before 0 are zero (normalized) states, indices past the episode end
    repeat the final state with zero reward.
    """

    traj: int
    t: int
    rtg_raw: float
    first_reward_raw: float
    valid_length: int


def segment(dataset: Dataset, L: int, history: int = 1,
            discard_padded: bool = False) -> list[Window]:
    if L < 2:
        raise ValueError(f"window length must be >= 2, got {L}")
    if not 1 <= history < L:
        raise ValueError(f"history length must be in 1..{L - 1}")
    out = []
    for i, traj in enumerate(dataset.trajectories):
        rtg = rtg_table(traj.rewards)
        n = len(traj)
        for t in range(n):
            last = t - history + 1 + L  # exclusive end index
            valid = L - max(0, last - n)
            if discard_padded and valid < L:
                continue
            out.append(Window(i, t, float(rtg[t]), float(traj.rewards[t]), valid))
    return out


@dataclass
class SegmentBatch:
    states: np.ndarray            # (b, L, d_s) normalized
    rtg_raw: np.ndarray
    first_reward_raw: np.ndarray
    start_timestep: np.ndarray
    episode_return: np.ndarray
    traj_ids: np.ndarray
    valid_length: np.ndarray


class SegmentTable:
    """All windows of a dataset materialized once for fast batch sampling."""

    def __init__(self, dataset: Dataset, L: int, history: int = 1,
                 discard_padded: bool = False):
        self.L, self.history = L, history
        self.windows = segment(dataset, L, history, discard_padded)
        if not self.windows:
            raise ValueError("dataset yields no windows")
        norm = [normalize_states(t.states, dataset.stats) for t in dataset.trajectories]
        d = dataset.d_s
        self.states = np.zeros((len(self.windows), L, d))
        for w_i, w in enumerate(self.windows):
            src = norm[w.traj]
            idx = np.arange(w.t - history + 1, w.t - history + 1 + L)
            real = idx >= 0
            self.states[w_i, real] = src[np.minimum(idx[real], len(src) - 1)]
        self.rtg_raw = np.array([w.rtg_raw for w in self.windows])
        self.first_reward_raw = np.array([w.first_reward_raw for w in self.windows])
        self.start_timestep = np.array([w.t for w in self.windows], dtype=np.int64)
        self.traj_ids = np.array([dataset.trajectories[w.traj].id for w in self.windows],
                                 dtype=np.int64)
        self.episode_return = np.array(
            [dataset.trajectories[w.traj].episode_return for w in self.windows])
        self.valid_length = np.array([w.valid_length for w in self.windows], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.windows)

    def take(self, idx: np.ndarray) -> SegmentBatch:
        return SegmentBatch(self.states[idx], self.rtg_raw[idx], self.first_reward_raw[idx],
                            self.start_timestep[idx], self.episode_return[idx],
                            self.traj_ids[idx], self.valid_length[idx])


def sample_batch(table: SegmentTable, b: int = 32, rng: np.random.Generator | None = None
                 ) -> SegmentBatch:
    rng = rng if rng is not None else np.random.default_rng()
    return table.take(rng.integers(0, len(table), size=b))


def consecutive_pairs(dataset: Dataset):
    """Normalized ``(s_t, s_{t+1})`` pairs with the raw action ``a_t``."""
    xs, ys = [], []
    for traj in dataset.trajectories:
        if len(traj) < 2:
            continue
        ns = normalize_states(traj.states, dataset.stats)
        xs.append(np.concatenate([ns[:-1], ns[1:]], axis=1))
        ys.append(traj.actions[:-1])
    if not xs:
        raise ValueError("dataset has no consecutive state pairs")
    return np.concatenate(xs), np.concatenate(ys)


# --- persistence -----------------------------------------------------------

def dataset_to_bytes(dataset: Dataset) -> bytes:
    if not dataset.trajectories:
        raise ValueError("refusing to write an empty dataset")
    s = dataset.stats
    d_s, d_a = dataset.d_s, dataset.d_a
    parts = [
        _HEADER.pack(MAGIC, VERSION, d_s, d_a, len(dataset), s.t_max,
                     ENV_KINDS.index(dataset.env.kind), 0 if s.return_basis == "episode" else 1,
                     0, dataset.env.h, dataset.env.sigma),
        _STATS.pack(s.T_min, s.T_max, s.r_min, s.r_max),
        np.asarray(s.state_min, dtype="<f8").tobytes(),
        np.asarray(s.state_max, dtype="<f8").tobytes(),
    ]
    for t in dataset.trajectories:
        parts.append(_TRAJ.pack(t.id, t.label, len(t)))
        parts.append(t.states.astype("<f8").tobytes())
        parts.append(t.actions.astype("<f8").tobytes())
        parts.append(t.rewards.astype("<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DatasetTruncatedError(f"file truncated at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))

    def floats(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)


def dataset_from_bytes(buf: bytes) -> Dataset:
    if len(buf) < 8 or buf[:8] != MAGIC:
        raise DatasetFormatError("not a dataset file (bad magic bytes)")
    r = _Reader(buf)
    (_, version, d_s, d_a, n_traj, t_max, kind, basis, _, env_h, env_sigma) = r.unpack(_HEADER)
    if version != VERSION:
        raise DatasetVersionError(f"unsupported dataset version {version}")
    if len(buf) < r.pos + 4:
        raise DatasetTruncatedError("file truncated in header")
    if zlib.crc32(buf[:-4]) != struct.unpack("<I", buf[-4:])[0]:
        # distinguish a short file from a corrupted one
        r_end = _scan_length(buf, r.pos, n_traj, d_s, d_a)
        if r_end is None or r_end + 4 > len(buf):
            raise DatasetTruncatedError("file is truncated")
        raise DatasetChecksumError("checksum mismatch")
    if n_traj == 0:
        raise DatasetFormatError("dataset file holds no trajectories")
    if kind >= len(ENV_KINDS):
        raise DatasetFormatError(f"unknown env kind code {kind}")
    T_min, T_max, r_min, r_max = r.unpack(_STATS)
    smin, smax = r.floats(d_s), r.floats(d_s)
    trajs = []
    for _ in range(n_traj):
        tid, label, n = r.unpack(_TRAJ)
        states = r.floats(n * d_s).reshape(n, d_s)
        actions = r.floats(n * d_a).reshape(n, d_a)
        rewards = r.floats(n)
        trajs.append(Trajectory(states, actions, rewards, tid, label))
    if r.pos + 4 != len(buf):
        raise DatasetFormatError("trailing bytes after dataset payload")
    stats = DatasetStats(T_min, T_max, r_min, r_max, smin, smax, t_max,
                         "episode" if basis == 0 else "rtg")
    return Dataset(trajs, stats, EnvInfo(ENV_KINDS[kind], env_h, env_sigma))


def _scan_length(buf: bytes, pos: int, n_traj: int, d_s: int, d_a: int) -> Optional[int]:
    pos += _STATS.size + 16 * d_s
    for _ in range(n_traj):
        if pos + _TRAJ.size > len(buf):
            return None
        n = _TRAJ.unpack_from(buf, pos)[2]
        pos += _TRAJ.size + 8 * n * (d_s + d_a + 1)
    return pos


def save_dataset(dataset: Dataset, path) -> None:
    Path(path).write_bytes(dataset_to_bytes(dataset))


def load_dataset(path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes())


def export_csv(dataset: Dataset, out_dir, labels: Sequence[int] | None = None,
               distances: Sequence[float] | None = None) -> list[Path]:
    """One CSV per trajectory (t, s_*, a_*, r) plus ``index.csv``.

    ``distances`` adds a column with each trajectory's distance to its class template.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    index_rows = []
    for i, traj in enumerate(dataset.trajectories):
        name = f"traj_{i:05d}.csv"
        p = out_dir / name
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"s_{j}" for j in range(dataset.d_s)]
                       + [f"a_{j}" for j in range(dataset.d_a)] + ["r"])
            for t in range(len(traj)):
                w.writerow([t] + [repr(float(v)) for v in traj.states[t]]
                           + [repr(float(v)) for v in traj.actions[t]]
                           + [repr(float(traj.rewards[t]))])
        paths.append(p)
        label = traj.label if labels is None else labels[i]
        row = [name, traj.id, label, repr(traj.episode_return), len(traj)]
        if distances is not None:
            row.append(repr(float(distances[i])))
        index_rows.append(row)
    with (out_dir / "index.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "id", "label", "return", "length"]
                   + (["template_distance"] if distances is not None else []))
        w.writerows(index_rows)
    return paths
