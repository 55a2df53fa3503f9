"""Closed-form expected hypervolume improvement for two minimised objectives."""
from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from ..tensor.core import ContractError
from .pareto import nondominated

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def psi(c, mean, std) -> np.ndarray:
    """``E[(c - Y)^+]`` for ``Y ~ N(mean, std^2)``; ``std = 0`` gives ``(c - mean)^+``."""
    c, mean, std = np.broadcast_arrays(np.asarray(c, float), np.asarray(mean, float), np.asarray(std, float))
    shape = c.shape
    c, mean, std = c.ravel(), mean.ravel(), std.ravel()
    out = np.maximum(c - mean, 0.0)
    pos = std > 0
    if np.any(pos):
        s = std[pos]
        u = (c[pos] - mean[pos]) / s
        with np.errstate(over="ignore"):
            # huge |u| from denormal std underflows the density to 0, which is its limit
            out[pos] = (c[pos] - mean[pos]) * ndtr(u) + s * _INV_SQRT_2PI * np.exp(-0.5 * u * u)
    return out.reshape(shape)

def ehvi(mean1, var1, mean2, var2, front, ref) -> np.ndarray:
    """EHVI of Gaussian predictions against ``front`` (rows of objective pairs).

    The improvement region is split into vertical strips at the front's first
    objective; strip ``i`` contributes ``[psi1(a_{i+1}) - psi1(a_i)] * psi2(b_i)``
    with ``a`` the sorted first objectives (``a_0 = -inf``, last = ``ref[0]``)
    and ``b`` the matching second objectives (``b_0 = ref[1]``).
    Works elementwise over arrays of predictions.
    """
    var1, var2 = np.asarray(var1, float), np.asarray(var2, float)
    if np.any(var1 < 0) or np.any(var2 < 0):
        raise ContractError("variances must be nonnegative")
    F = np.asarray(front, dtype=float).reshape(-1, 2)
    r1, r2 = float(ref[0]), float(ref[1])
    if len(F) and not np.all(F < np.array([r1, r2])):
        raise ContractError("reference point must be strictly worse than every front member")
    F = F[nondominated(F)]
    F = F[np.argsort(F[:, 0], kind="stable")]
    s1, s2 = np.sqrt(var1), np.sqrt(var2)
    a = np.concatenate([F[:, 0], [r1]])
    b = np.concatenate([[r2], F[:, 1]])
    total = np.zeros(np.broadcast(np.asarray(mean1), np.asarray(mean2)).shape)
    prev = np.zeros_like(total)
    for i in range(len(a)):
        cur = psi(a[i], mean1, s1)
        total = total + (cur - prev) * psi(b[i], mean2, s2)
        prev = cur
    return np.maximum(total, 0.0)


def hypervolume_improvement(y, front, ref) -> float:
    """Deterministic improvement of one point ``y``."""
    return float(ehvi(y[0], 0.0, y[1], 0.0, front, ref))
