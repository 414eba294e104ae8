"""Reverse-mode gradients over numpy arrays.

Operations executed while a :class:`Tape` is active are appended to it in
execution order; :meth:`Tape.gradient` replays them backwards.  Outside a tape
the same operations run eagerly with no bookkeeping, which is what sampling
uses.
"""
from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

_ACTIVE: list["Tape"] = []


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class Var:
    """A float64 array, optionally tracked by the active tape."""

    __slots__ = ("value", "tracked")
    __array_priority__ = 100

    def __init__(self, value, tracked: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.tracked = tracked

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(shape={self.shape}, tracked={self.tracked})"

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


VJP = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    """Records differentiable operations for one backward pass."""

    def __init__(self):
        self.nodes: list[tuple[Var, tuple, VJP]] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    @staticmethod
    def watch(params: Mapping[str, np.ndarray]) -> dict[str, Var]:
        return {name: Var(value, tracked=True) for name, value in params.items()}

    def gradient(self, out: Var, wrt: Mapping[str, Var]) -> dict[str, np.ndarray]:
        if out.value.size != 1:
            raise ValueError(f"gradient needs a scalar output, got shape {out.shape}")
        grads: dict[int, np.ndarray] = {id(out): np.ones_like(out.value)}
        for node_out, inputs, vjp in reversed(self.nodes):
            g = grads.pop(id(node_out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, vjp(g)):
                if gi is None or not (isinstance(inp, Var) and inp.tracked):
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return {
            name: grads[id(v)] if id(v) in grads else np.zeros_like(v.value)
            for name, v in wrt.items()
        }


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def emit(value: np.ndarray, inputs: Iterable, vjp: VJP, name: str) -> Var:
    """Wrap an op result, check finiteness and record it if any input is tracked."""
    if not np.isfinite(value).all():
        raise NonFiniteError(f"{name} produced non-finite values")
    inputs = tuple(inputs)
    tracked = bool(_ACTIVE) and any(isinstance(x, Var) and x.tracked for x in inputs)
    out = Var(value, tracked)
    if tracked:
        _ACTIVE[-1].nodes.append((out, inputs, vjp))
    return out
