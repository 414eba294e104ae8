"""Shared fixtures: trained toy-env models and the per-criterion acceptance summary.

Acceptance models take minutes each on a CPU.  Set ``TCD_MODEL_CACHE`` to a
directory to reuse checkpoints across runs; by default every run trains afresh.
"""
import hashlib
import json
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pytest

from tcdiffuser.agent import train_inverse_dynamics
from tcdiffuser.checkpoint import load_checkpoint, save_checkpoint
from tcdiffuser.conditioning import PRESETS
from tcdiffuser.envs import generate_dataset, make_env
from tcdiffuser.training import TrainConfig, train_denoiser

# toy-env recipe shared by every acceptance model
ACCEPT_TRAIN = TrainConfig(steps=3000, lr=1e-3, ema_decay=0.995, log_every=500)
N_TRAJ, H, SIGMA = 600, 10, 0.01

_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def record():
    def _record(n: int, ok: bool, detail: str) -> bool:
        _RESULTS[n] = (bool(ok), detail)
        return bool(ok)
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        ok, detail = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


class ModelZoo:
    """Lazily trains and memoizes datasets, denoisers and inverse models."""

    def __init__(self, cache_dir):
        self.cache = Path(cache_dir) if cache_dir else None
        self._datasets = {}
        self._models = {}
        self._inverse = {}

    def dataset(self, kind: str, seed: int = 0):
        key = (kind, seed)
        if key not in self._datasets:
            self._datasets[key] = generate_dataset(make_env(kind, H, SIGMA), N_TRAJ,
                                                   np.random.default_rng(seed))
        return self._datasets[key]

    def denoiser(self, kind: str, preset: str, seed: int = 0, cfg: TrainConfig = ACCEPT_TRAIN):
        key = (kind, preset, seed, cfg)
        if key in self._models:
            return self._models[key]
        tag = hashlib.sha256(json.dumps([kind, preset, seed, asdict(cfg)],
                                        sort_keys=True).encode()).hexdigest()[:12]
        path = self.cache / f"{kind}-{preset}-{seed}-{tag}.ckpt" if self.cache else None
        if path is not None and path.exists():
            trained = load_checkpoint(path)[0]
        else:
            trained = train_denoiser(self.dataset(kind, seed), PRESETS[preset], cfg,
                                     np.random.default_rng(1000 + seed))
            if path is not None:
                path.parent.mkdir(parents=True, exist_ok=True)
                save_checkpoint(path, trained)
        self._models[key] = trained
        return trained

    def inverse(self, kind: str, seed: int = 0):
        key = (kind, seed)
        if key not in self._inverse:
            self._inverse[key] = train_inverse_dynamics(self.dataset(kind, seed),
                                                        rng=np.random.default_rng(2000 + seed))
        return self._inverse[key]


@pytest.fixture(scope="session")
def zoo():
    return ModelZoo(os.environ.get("TCD_MODEL_CACHE"))
