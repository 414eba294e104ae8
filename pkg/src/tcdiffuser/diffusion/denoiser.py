"""Temporal U-net noise predictor over (batch, L, d_s) state windows."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..numerics import Params, ops

COND_DIM = 3


@dataclass(frozen=True)
class UnetConfig:
    state_dim: int
    base_width: int = 32
    dim_mults: tuple[int, ...] = (1, 2, 4)
    kernel_size: int = 5
    groups: int = 8

    def __post_init__(self):
        object.__setattr__(self, "dim_mults", tuple(int(m) for m in self.dim_mults))
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")
        for w in self.widths:
            if w % self.groups:
                raise ValueError(f"width {w} not divisible by {self.groups} groups")

    @property
    def widths(self) -> list[int]:
        return [self.base_width * m for m in self.dim_mults]

    @property
    def length_multiple(self) -> int:
        return 2 ** (len(self.dim_mults) - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dim_mults"] = list(self.dim_mults)
        return d


def step_embedding(k: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer diffusion steps, shape (B, dim)."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = np.asarray(k, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _init_linear(rng, p: Params, name: str, n_in: int, n_out: int) -> None:
    p[f"{name}.w"] = _uniform(rng, (n_in, n_out), n_in)
    p[f"{name}.b"] = _uniform(rng, (n_out,), n_in)


def _init_conv(rng, p: Params, name: str, cin: int, cout: int, k: int) -> None:
    p[f"{name}.w"] = _uniform(rng, (k, cin, cout), cin * k)
    p[f"{name}.b"] = _uniform(rng, (cout,), cin * k)


def _init_block(rng, p: Params, name: str, cin: int, cout: int, k: int) -> None:
    _init_conv(rng, p, f"{name}.conv", cin, cout, k)
    p[f"{name}.gn.g"] = np.ones(cout)
    p[f"{name}.gn.b"] = np.zeros(cout)


def _init_res(rng, p: Params, name: str, cin: int, cout: int, emb: int, k: int) -> None:
    _init_block(rng, p, f"{name}.b0", cin, cout, k)
    _init_block(rng, p, f"{name}.b1", cout, cout, k)
    _init_linear(rng, p, f"{name}.emb", emb, cout)
    if cin != cout:
        _init_conv(rng, p, f"{name}.skip", cin, cout, 1)


def init_params(cfg: UnetConfig, rng: np.random.Generator) -> Params:
    p: Params = {}
    e, k = cfg.base_width, cfg.kernel_size
    widths = cfg.widths
    _init_linear(rng, p, "time.l0", e, 4 * e)
    _init_linear(rng, p, "time.l1", 4 * e, e)
    _init_linear(rng, p, "cond.l0", COND_DIM, 4 * e)
    _init_linear(rng, p, "cond.l1", 4 * e, e)
    cin = cfg.state_dim
    for i, w in enumerate(widths):
        _init_res(rng, p, f"down{i}.r0", cin, w, e, k)
        _init_res(rng, p, f"down{i}.r1", w, w, e, k)
        if i < len(widths) - 1:
            _init_conv(rng, p, f"down{i}.pool", w, w, 3)
        cin = w
    _init_res(rng, p, "mid.r0", cin, cin, e, k)
    _init_res(rng, p, "mid.r1", cin, cin, e, k)
    for j, i in enumerate(range(len(widths) - 1, 0, -1)):
        _init_res(rng, p, f"up{j}.r0", 2 * widths[i], widths[i - 1], e, k)
        _init_res(rng, p, f"up{j}.r1", widths[i - 1], widths[i - 1], e, k)
        _init_conv(rng, p, f"up{j}.conv", widths[i - 1], widths[i - 1], 3)
    _init_block(rng, p, "final.b", widths[0], widths[0], k)
    _init_conv(rng, p, "final.out", widths[0], cfg.state_dim, 1)
    return p


def _block(p, name, x, groups):
    h = ops.conv1d(x, p[f"{name}.conv.w"], p[f"{name}.conv.b"])
    h = ops.group_norm(h, p[f"{name}.gn.g"], p[f"{name}.gn.b"], groups)
    return ops.mish(h)


def _res(p, name, x, emb_act, groups):
    h = _block(p, f"{name}.b0", x, groups)
    e = ops.linear(emb_act, p[f"{name}.emb.w"], p[f"{name}.emb.b"])
    h = h + ops.reshape(e, (e.shape[0], 1, e.shape[1]))
    h = _block(p, f"{name}.b1", h, groups)
    if f"{name}.skip.w" in p:
        x = ops.conv1d(x, p[f"{name}.skip.w"], p[f"{name}.skip.b"])
    return h + x


def apply_unet(cfg: UnetConfig, p, x, cond: np.ndarray, k: np.ndarray):
    """Predict noise for windows ``x`` (B, L, d_s) given condition rows (B, 3) and steps (B,)."""
    xv = x.value if hasattr(x, "value") else np.asarray(x)
    if xv.ndim != 3 or xv.shape[-1] != cfg.state_dim:
        raise ValueError(f"expected (B, L, {cfg.state_dim}) input, got {xv.shape}")
    if xv.shape[1] % cfg.length_multiple:
        raise ValueError(f"window length {xv.shape[1]} must be a multiple of {cfg.length_multiple}")
    cond = np.asarray(cond, dtype=np.float64)
    if cond.shape != (xv.shape[0], COND_DIM):
        raise ValueError(f"condition shape {cond.shape} != ({xv.shape[0]}, {COND_DIM})")
    g = cfg.groups
    temb = step_embedding(np.asarray(k), cfg.base_width)
    t = ops.linear(ops.mish(ops.linear(temb, p["time.l0.w"], p["time.l0.b"])),
                   p["time.l1.w"], p["time.l1.b"])
    c = ops.linear(ops.mish(ops.linear(cond, p["cond.l0.w"], p["cond.l0.b"])),
                   p["cond.l1.w"], p["cond.l1.b"])
    emb_act = ops.mish(t + c)

    n = len(cfg.widths)
    h = x
    skips = []
    for i in range(n):
        h = _res(p, f"down{i}.r0", h, emb_act, g)
        h = _res(p, f"down{i}.r1", h, emb_act, g)
        skips.append(h)
        if i < n - 1:
            h = ops.conv1d(h, p[f"down{i}.pool.w"], p[f"down{i}.pool.b"], stride=2, padding=1)
    h = _res(p, "mid.r0", h, emb_act, g)
    h = _res(p, "mid.r1", h, emb_act, g)
    for j in range(n - 1):
        h = ops.concat([h, skips.pop()], axis=-1)
        h = _res(p, f"up{j}.r0", h, emb_act, g)
        h = _res(p, f"up{j}.r1", h, emb_act, g)
        h = ops.conv1d(ops.upsample2(h), p[f"up{j}.conv.w"], p[f"up{j}.conv.b"])
    h = _block(p, "final.b", h, g)
    return ops.conv1d(h, p["final.out.w"], p["final.out.b"])


class Denoiser:
    """Bundles a config with its parameters; calling it predicts noise as an array."""

    def __init__(self, cfg: UnetConfig, params: Params):
        self.cfg = cfg
        self.params = params

    @classmethod
    def create(cls, cfg: UnetConfig, rng: np.random.Generator) -> "Denoiser":
        return cls(cfg, init_params(cfg, rng))

    def __call__(self, x: np.ndarray, cond: np.ndarray, k) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        kk = np.broadcast_to(np.asarray(k), (x.shape[0],))
        return apply_unet(self.cfg, self.params, x, cond, kk).value

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())
