"""Denoiser training loop over segmented trajectory windows."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .conditioning import AblationFlags, DatasetStats, drop_mask, train_condition_matrix
from .data import Dataset, SegmentTable, sample_batch
from .diffusion import Denoiser, NoiseSchedule, UnetConfig, known_mask, make_schedule, training_loss
from .numerics import AdamState, adam_step

LogFn = Callable[[dict], None]


@dataclass(frozen=True)
class TrainConfig:
    L: int = 20
    T_HC: int = 5
    batch_size: int = 32
    lr: float = 2e-4
    steps: int = 2000
    K: int = 200
    schedule: str = "cosine"
    condition_dropout_p: float = 0.25
    # write the clean history into the noised input and leave it out of the loss
    train_inpaint: bool = True
    mask_history_loss: bool = True
    base_width: int = 32
    dim_mults: tuple[int, ...] = (1, 2, 4)
    kernel_size: int = 5
    log_every: int = 100
    # exponential moving average of the weights used for sampling; 0 disables it
    ema_decay: float = 0.0

    def __post_init__(self):
        if not 1 <= self.T_HC < self.L:
            raise ValueError(f"T_HC={self.T_HC} must satisfy 1 <= T_HC < L={self.L}")
        if self.K < 1 or self.steps < 0 or self.batch_size < 1:
            raise ValueError("K, batch size must be >= 1 and steps >= 0")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")

    def unet(self, state_dim: int) -> UnetConfig:
        return UnetConfig(state_dim, self.base_width, self.dim_mults, self.kernel_size)


@dataclass
class TrainedDenoiser:
    model: Denoiser
    schedule: NoiseSchedule
    flags: AblationFlags
    stats: DatasetStats
    L: int
    T_HC: int
    losses: list[float] = field(default_factory=list)


def train_denoiser(dataset: Dataset, flags: AblationFlags, cfg: TrainConfig,
                   rng: Optional[np.random.Generator] = None,
                   log: Optional[LogFn] = None,
                   init: Optional[Denoiser] = None) -> TrainedDenoiser:
    rng = rng if rng is not None else np.random.default_rng(0)
    sched = make_schedule(cfg.K, cfg.schedule)
    table = SegmentTable(dataset, cfg.L, history=cfg.T_HC)
    model = init or Denoiser.create(cfg.unet(dataset.d_s), rng)
    params = dict(model.params)
    opt = AdamState.for_params(params, lr=cfg.lr)
    inpaint = flags.use_historical and cfg.train_inpaint
    ema = dict(params) if cfg.ema_decay else None
    losses: list[float] = []
    t0 = time.perf_counter()
    for step in range(1, cfg.steps + 1):
        batch = sample_batch(table, cfg.batch_size, rng)
        cond = train_condition_matrix(batch, dataset.stats, flags)
        cond[drop_mask(len(cond), cfg.condition_dropout_p, rng)] = 0.0
        k = rng.integers(1, sched.K + 1, size=cfg.batch_size)
        eps = rng.standard_normal(batch.states.shape)
        known = known_mask(cfg.batch_size, cfg.L, cfg.T_HC) if inpaint else None
        loss, grads = training_loss(model.cfg, params, batch.states, cond, k, eps, sched,
                                    known, cfg.mask_history_loss)
        params = adam_step(params, grads, opt)
        if ema is not None:
            d = cfg.ema_decay
            ema = {n: d * ema[n] + (1.0 - d) * params[n] for n in params}
        losses.append(loss)
        if log is not None and (step % cfg.log_every == 0 or step == cfg.steps):
            log({"step": step, "loss": loss,
                 "wall_ms": round((time.perf_counter() - t0) * 1000.0, 3)})
    model = Denoiser(model.cfg, ema if ema is not None else params)
    return TrainedDenoiser(model, sched, flags, dataset.stats, cfg.L, cfg.T_HC, losses)

