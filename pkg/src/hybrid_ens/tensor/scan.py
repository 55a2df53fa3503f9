"""Differentiable selective scan on top of the active kernel backend."""
from __future__ import annotations

import numpy as np

from . import kernels
from .core import ContractError, DimensionError, Tensor, make_result


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def selective_scan(x: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor) -> Tensor:
    """Zero-order-hold selective scan.

    ``h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * x_t`` with ``h_0 = 0``
    and ``y_t = <C_t, h_t>``.  Shapes: x, delta (n, D, L); A (D, S);
    B, C (n, S, L).  Returns y of shape (n, D, L).
    """
    n, D, L = x.shape
    if delta.shape != x.shape:
        raise DimensionError(f"selective_scan: delta {delta.shape} vs x {x.shape}")
    if A.ndim != 2 or A.shape[0] != D:
        raise DimensionError(f"selective_scan: A {A.shape} vs channels {D}")
    S = A.shape[1]
    if B.shape != (n, S, L) or C.shape != (n, S, L):
        raise DimensionError(f"selective_scan: B {B.shape}, C {C.shape}, expected {(n, S, L)}")
    if np.any(delta.data <= 0):
        raise ContractError("selective_scan: step sizes must be positive")
    backend = kernels.active()
    xd, dd, ad = _c(x.data), _c(delta.data), _c(A.data)
    bt, ct = _c(B.data.transpose(0, 2, 1)), _c(C.data.transpose(0, 2, 1))
    y, hs, decay = backend.scan_forward(xd, dd, ad, bt, ct)

    def bw(g):
        gx, gd, gA, gB, gC = backend.scan_backward(_c(g), xd, dd, ad, bt, ct, hs, decay)
        return (np.asarray(gx), np.asarray(gd), np.asarray(gA),
                np.asarray(gB).transpose(0, 2, 1), np.asarray(gC).transpose(0, 2, 1))
    return make_result(np.asarray(y), (x, delta, A, B, C), bw, selective_scan)
