"""Central finite-difference check of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class GradcheckResult:
    max_rel_error: float
    worst: str
    checked: int

    def ok(self, tol: float) -> bool:
        return self.max_rel_error <= tol


def gradcheck(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-3, floor: float = 1e-2,
              max_entries: int | None = None, rng: np.random.Generator | None = None,
              names: Sequence[str] | None = None) -> GradcheckResult:
    """Compare ``T.grad(fn(), params)`` with central differences.

    ``fn`` must rebuild the scalar loss from the current values of
    ``params`` and be deterministic (draw any randomness from a freshly
    seeded generator inside ``fn``). Parameters should be float64.
    The error of one entry is ``|a - n| / max(|a|, |n|, floor)``.
    ``max_entries`` caps the number of checked entries per tensor; the
    subset is drawn from ``rng``.
    """
    for p in params:
        if p.dtype != np.float64:
            raise TypeError(f"gradcheck needs float64 parameters, got {p.dtype}")
        # entries are perturbed in place through a flat view
        p.data = np.ascontiguousarray(p.data)
    names = list(names) if names is not None else [f"param{i}" for i in range(len(params))]
    analytic = [g.data for g in T.grad(fn(), list(params))]
    worst, worst_at, checked = 0.0, "", 0
    rng = rng or np.random.default_rng(0)
    for p, a, name in zip(params, analytic, names):
        flat = p.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = rng.choice(flat.size, size=max_entries, replace=False)
        for i in entries:
            orig = flat[i]
            flat[i] = orig + h
            up = fn().item()
            flat[i] = orig - h
            down = fn().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            ai = float(a.reshape(-1)[i])
            err = abs(ai - numeric) / max(abs(ai), abs(numeric), floor)
            checked += 1
            if err > worst:
                worst, worst_at = err, f"{name}[{np.unravel_index(i, p.shape)}]: autodiff {ai:.6g}, numeric {numeric:.6g}"
    return GradcheckResult(worst, worst_at, checked)
