from __future__ import annotations

from typing import Callable, NamedTuple, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


class GradCheckReport(NamedTuple):
    max_error: float
    checked: int
    skipped: int


def finite_diff_report(f: Callable[[], Tensor], params: Sequence[Tensor], epsilon: float = 1e-5,
                       n_samples: int | None = None, rng=None, kink_tol: float | None = None) -> GradCheckReport:
    """Compare tape gradients with central differences coordinate by coordinate.

    ``f`` rebuilds a scalar from ``params`` on every call.  With
    ``n_samples`` only that many coordinates per parameter are probed,
    chosen by ``rng``; otherwise every coordinate is.

    With ``kink_tol`` set, a coordinate whose forward and backward one-sided
    differences disagree by more than ``kink_tol`` is skipped: the stencil
    straddles a ReLU or max-pool switch there, so no difference quotient
    is meaningful.  The test uses only function values, never the analytic
    gradient, so a wrong gradient cannot hide behind it.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError("finite_diff_check requires float64 parameters")
        p.requires_grad = True
        p.grad = None
    out = f()
    if out.size != 1:
        raise ValueError("f must return a scalar")
    base = float(out.data)
    if not np.isfinite(base):
        raise FloatingPointError("non-finite value of f at the base point")
    out.backward()
    rng = np.random.default_rng(rng)

    worst, checked, skipped = 0.0, 0, 0
    for p in params:
        analytic = np.zeros(p.shape) if p.grad is None else p.grad
        coords = np.arange(p.size)
        if n_samples is not None and n_samples < p.size:
            coords = rng.choice(p.size, size=n_samples, replace=False)
        flat = p.data.reshape(-1)
        for i in coords:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + epsilon
                up = float(f().data)
                flat[i] = orig - epsilon
                down = float(f().data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"non-finite value of f near coordinate {i}")
            if kink_tol is not None and abs((up - base) - (base - down)) / epsilon > kink_tol:
                skipped += 1
                continue
            numeric = (up - down) / (2 * epsilon)
            worst = max(worst, float(relative_error(analytic.reshape(-1)[i], numeric)))
            checked += 1
    return GradCheckReport(worst, checked, skipped)


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], epsilon: float = 1e-5,
                      n_samples: int | None = None, rng=None, kink_tol: float | None = None) -> float:
    """Largest relative error between tape gradients and central differences."""
    return finite_diff_report(f, params, epsilon, n_samples, rng, kink_tol).max_error
