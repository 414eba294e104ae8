"""Differentiable operations used by the denoiser and inverse-dynamics nets.

Sequences are channels-last: ``(batch, length, channels)``.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tape import Var, emit, value_of


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Var:
    av, bv = value_of(a), value_of(b)
    return emit(av + bv, (a, b),
                lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)), "add")


def sub(a, b) -> Var:
    av, bv = value_of(a), value_of(b)
    return emit(av - bv, (a, b),
                lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)), "sub")


def mul(a, b) -> Var:
    av, bv = value_of(a), value_of(b)
    return emit(av * bv, (a, b),
                lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
                "mul")


def square(a) -> Var:
    av = value_of(a)
    return emit(av * av, (a,), lambda g: (2.0 * g * av,), "square")


def reshape(a, shape: Sequence[int]) -> Var:
    av = value_of(a)
    return emit(av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),), "reshape")


def concat(xs: Sequence, axis: int = -1) -> Var:
    vals = [value_of(x) for x in xs]
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return emit(np.concatenate(vals, axis=axis), xs, vjp, "concat")


def total(a) -> Var:
    av = value_of(a)
    return emit(np.array(av.sum()), (a,), lambda g: (np.broadcast_to(g, av.shape).copy(),), "sum")


def mean(a) -> Var:
    av = value_of(a)
    n = av.size
    return emit(np.array(av.mean()), (a,),
                lambda g: (np.full(av.shape, float(g) / n),), "mean")


def masked_mse(pred, target, mask: np.ndarray | None = None) -> Var:
    """Mean of ``(pred - target)**2`` over the elements where ``mask`` is 1."""
    pv, tv = value_of(pred), value_of(target)
    if pv.shape != tv.shape:
        raise ValueError(f"mse shape mismatch {pv.shape} vs {tv.shape}")
    diff = pv - tv
    if mask is None:
        w = np.ones_like(diff)
    else:
        w = np.broadcast_to(np.asarray(mask, dtype=np.float64), diff.shape)
    count = w.sum()
    if count == 0:
        raise ValueError("mse mask selects no elements")
    loss = float((diff * diff * w).sum() / count)

    def vjp(g):
        d = (2.0 * float(g) / count) * diff * w
        return d, -d

    return emit(np.array(loss), (pred, target), vjp, "mse")


def linear(x, w, b=None) -> Var:
    """``x @ w + b`` for ``x`` of shape (n, in), ``w`` (in, out)."""
    xv, wv = value_of(x), value_of(w)
    out = xv @ wv
    if b is not None:
        out = out + value_of(b)

    def vjp(g):
        grads = [g @ wv.T, xv.T @ g]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return emit(out, inputs, vjp, "linear")


def conv1d(x, w, b=None, stride: int = 1, padding: int | None = None) -> Var:
    """1-D convolution along time; ``x`` (B, L, Cin), ``w`` (k, Cin, Cout)."""
    xv, wv = value_of(x), value_of(w)
    k, cin, cout = wv.shape
    if xv.shape[-1] != cin:
        raise ValueError(f"conv1d expects {cin} input channels, got {xv.shape[-1]}")
    pad = (k - 1) // 2 if padding is None else padding
    bsz, length, _ = xv.shape
    xp = np.pad(xv, ((0, 0), (pad, pad), (0, 0))) if pad else xv
    win = sliding_window_view(xp, k, axis=1)[:, ::stride]  # (B, Lo, Cin, k)
    lout = win.shape[1]
    cols = win.transpose(0, 1, 3, 2).reshape(bsz * lout, k * cin)
    wf = wv.reshape(k * cin, cout)
    out = (cols @ wf).reshape(bsz, lout, cout)
    if b is not None:
        out = out + value_of(b)

    def vjp(g):
        g2 = g.reshape(bsz * lout, cout)
        dw = (cols.T @ g2).reshape(k, cin, cout)
        dcols = (g2 @ wf.T).reshape(bsz, lout, k, cin)
        dxp = np.zeros_like(xp)
        span = stride * (lout - 1) + 1
        for j in range(k):
            dxp[:, j:j + span:stride] += dcols[:, :, j]
        dx = dxp[:, pad:pad + length] if pad else dxp
        grads = [dx, dw]
        if b is not None:
            grads.append(g.sum(axis=(0, 1)))
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return emit(out, inputs, vjp, "conv1d")


def upsample2(x) -> Var:
    """Nearest-neighbour doubling along time."""
    xv = value_of(x)
    bsz, length, c = xv.shape
    return emit(np.repeat(xv, 2, axis=1), (x,),
                lambda g: (g.reshape(bsz, length, 2, c).sum(axis=2),), "upsample2")


def group_norm(x, gamma, beta, groups: int, eps: float = 1e-5) -> Var:
    xv = value_of(x)
    gv, bv = value_of(gamma), value_of(beta)
    bsz, length, c = xv.shape
    if c % groups:
        raise ValueError(f"{c} channels not divisible into {groups} groups")
    xr = xv.reshape(bsz, length, groups, c // groups)
    mu = xr.mean(axis=(1, 3), keepdims=True)
    centered = xr - mu
    var = (centered * centered).mean(axis=(1, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    xhat_flat = xhat.reshape(bsz, length, c)
    out = xhat_flat * gv + bv

    def vjp(g):
        dgamma = (g * xhat_flat).sum(axis=(0, 1))
        dbeta = g.sum(axis=(0, 1))
        dxhat = (g * gv).reshape(xr.shape)
        dx = inv * (dxhat - dxhat.mean(axis=(1, 3), keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=(1, 3), keepdims=True))
        return dx.reshape(xv.shape), dgamma, dbeta

    return emit(out, (x, gamma, beta), vjp, "group_norm")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def mish(x) -> Var:
    """``x * tanh(softplus(x))`` using tanh(log(1+e)) = n / (n + 2), n = e(e + 2)."""
    xv = value_of(x)
    e = np.exp(np.minimum(xv, 20.0))
    n = e * (e + 2.0)
    w = n / (n + 2.0)
    out = xv * w

    def vjp(g):
        return (g * (w + xv * (1.0 - w * w) * (e / (1.0 + e))),)

    return emit(out, (x,), vjp, "mish")


def silu(x) -> Var:
    xv = value_of(x)
    s = _sigmoid(xv)
    return emit(xv * s, (x,), lambda g: (g * (s + xv * s * (1.0 - s)),), "silu")


def tanh(x) -> Var:
    xv = value_of(x)
    t = np.tanh(xv)
    return emit(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")
