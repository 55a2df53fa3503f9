"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Tensor, backward, no_grad

DEFAULT_STEP = 1e-4


def finite_difference_check(f: Callable[[], Tensor], params: Sequence[Tensor],
                            step: float = DEFAULT_STEP, max_entries: int | None = None,
                            rng: np.random.Generator | None = None) -> float:
    """Max over checked entries of ``|analytic - numeric| / (|analytic| + step)``.

    ``f`` rebuilds the scalar loss from the current values of ``params``.
    With ``max_entries`` only that many randomly chosen entries per parameter
    are perturbed.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    for p in params:
        p.grad = None
    loss = f()
    backward(loss)
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.data = np.ascontiguousarray(p.data)
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + step
                up = f().item()
                flat[i] = orig - step
                down = f().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / (abs(a) + step))
    return worst
