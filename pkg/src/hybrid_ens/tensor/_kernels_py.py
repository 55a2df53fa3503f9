"""Pure-numpy reference kernels; the compiled ``_kernels`` module mirrors these signatures.

Scan layouts: x, delta (n, D, L); A (D, S); Bt, Ct time-major (n, L, S);
hidden states and decay factors (n, D, L, S).
Depthwise conv: x (n, c, h, w), kernel (c, 3, 3), zero padding 1.
"""
import numpy as np


def dwconv3x3_forward(x, k):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    y = np.zeros_like(x)
    for dy in range(3):
        for dx in range(3):
            y += k[None, :, dy, dx, None, None] * xp[:, :, dy:dy + h, dx:dx + w]
    return y


def dwconv3x3_backward(g, x, k):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    gxp = np.zeros_like(xp)
    gk = np.empty((c, 3, 3))
    for dy in range(3):
        for dx in range(3):
            gxp[:, :, dy:dy + h, dx:dx + w] += k[None, :, dy, dx, None, None] * g
            gk[:, dy, dx] = (g * xp[:, :, dy:dy + h, dx:dx + w]).sum(axis=(0, 2, 3))
    return np.ascontiguousarray(gxp[:, :, 1:-1, 1:-1]), gk


def scan_forward(x, delta, A, Bt, Ct):
    n, D, L = x.shape
    S = A.shape[1]
    hs = np.empty((n, D, L, S))
    decay = np.exp(delta[..., None] * A[None, :, None, :])
    y = np.empty((n, D, L))
    h = np.zeros((n, D, S))
    for t in range(L):
        h = decay[:, :, t] * h + (delta[:, :, t, None] * x[:, :, t, None]) * Bt[:, None, t, :]
        hs[:, :, t] = h
        y[:, :, t] = (h * Ct[:, None, t, :]).sum(axis=2)
    return y, hs, decay


def scan_backward(gy, x, delta, A, Bt, Ct, hs, decay):
    n, D, L = x.shape
    S = A.shape[1]
    gx = np.empty_like(x)
    gdelta = np.empty_like(delta)
    gA = np.zeros_like(A)
    gB = np.empty_like(Bt)
    gC = np.empty_like(Ct)
    carry = np.zeros((n, D, S))
    zero = np.zeros((n, D, S))
    for t in range(L - 1, -1, -1):
        dt = delta[:, :, t, None]
        a = decay[:, :, t]
        gyt = gy[:, :, t, None]
        h_prev = hs[:, :, t - 1] if t > 0 else zero
        gh = Ct[:, None, t, :] * gyt + carry
        gC[:, t] = (gyt * hs[:, :, t]).sum(axis=1)
        ga = gh * h_prev * a
        bt = Bt[:, None, t, :]
        xt = x[:, :, t, None]
        gdelta[:, :, t] = (ga * A[None] + gh * bt * xt).sum(axis=2)
        gA += (ga * dt).sum(axis=0)
        gB[:, t] = (gh * dt * xt).sum(axis=1)
        gx[:, :, t] = (gh * dt * bt).sum(axis=2)
        carry = a * gh
    return gx, gdelta, gA, gB, gC
