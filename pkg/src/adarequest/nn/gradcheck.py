from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autograd import Tensor


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], probes: int = 50,
               h: float = 1e-5, rng: np.random.Generator | None = None,
               floor: float = 1.0) -> float:
    """Max relative error between backprop and central finite differences.

    ``probes`` coordinates are drawn per parameter tensor (all of them when the
    tensor is smaller).  Error is ``|a - n| / max(floor, |a|, |n|)``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    params = list(params)
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= probes else rng.choice(n, size=probes, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            f_plus = loss_fn().item()
            flat[c] = orig - h
            f_minus = loss_fn().item()
            flat[c] = orig
            num = (f_plus - f_minus) / (2.0 * h)
            an = a.reshape(-1)[c]
            worst = max(worst, abs(an - num) / max(floor, abs(an), abs(num)))
    for p in params:
        p.grad = None
    return float(worst)
