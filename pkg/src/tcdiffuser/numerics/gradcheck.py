from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tape import Tape, Var, value_of


def grad_check(f: Callable[[Mapping[str, "Var | np.ndarray"]], Var],
               point: Mapping[str, np.ndarray], h: float = 1e-5) -> float:
    """Max over all parameters of ``|analytic - central difference| / max(1, |analytic|)``.

    ``f`` maps a parameter dict to a scalar; it is called on tracked vars for the
    analytic gradient and on plain arrays for the finite differences.
    """
    if h <= 0:
        raise ValueError("step size h must be positive")
    with Tape() as tape:
        watched = tape.watch(point)
        out = f(watched)
        if not isinstance(out, Var):
            out = Var(out)
        if not np.isfinite(out.value).all():
            raise FloatingPointError("f is not finite at the check point")
        analytic = tape.gradient(out, watched)

    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in point.items()}

    def fval() -> float:
        val = float(value_of(f(work)))
        if not np.isfinite(val):
            raise FloatingPointError("f is not finite at a perturbed point")
        return val

    worst = 0.0
    for name, arr in work.items():
        flat = arr.reshape(-1)
        agrad = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fval()
            flat[i] = orig - h
            fm = fval()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            err = abs(agrad[i] - numeric) / max(1.0, abs(agrad[i]))
            worst = max(worst, err)
    return worst
