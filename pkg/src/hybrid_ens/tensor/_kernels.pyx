# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; same contracts as ``_kernels_py``."""
import numpy as np
from libc.math cimport exp


def scan_forward(double[:, :, ::1] x, double[:, :, ::1] delta, double[:, ::1] A,
                 double[:, :, ::1] Bt, double[:, :, ::1] Ct):
    cdef Py_ssize_t n = x.shape[0], D = x.shape[1], L = x.shape[2], S = A.shape[1]
    cdef Py_ssize_t b, d, t, s
    y_arr = np.empty((n, D, L))
    hs_arr = np.empty((n, D, L, S))
    decay_arr = np.empty((n, D, L, S))
    cdef double[:, :, ::1] y = y_arr
    cdef double[:, :, :, ::1] hs = hs_arr
    cdef double[:, :, :, ::1] decay = decay_arr
    cdef double dt, dx, acc, a, hv
    with nogil:
        for b in range(n):
            for d in range(D):
                for t in range(L):
                    dt = delta[b, d, t]
                    dx = dt * x[b, d, t]
                    acc = 0.0
                    for s in range(S):
                        a = exp(dt * A[d, s])
                        hv = dx * Bt[b, t, s]
                        if t > 0:
                            hv = hv + a * hs[b, d, t - 1, s]
                        decay[b, d, t, s] = a
                        hs[b, d, t, s] = hv
                        acc = acc + Ct[b, t, s] * hv
                    y[b, d, t] = acc
    return y_arr, hs_arr, decay_arr


def scan_backward(double[:, :, ::1] gy, double[:, :, ::1] x, double[:, :, ::1] delta,
                  double[:, ::1] A, double[:, :, ::1] Bt, double[:, :, ::1] Ct,
                  double[:, :, :, ::1] hs, double[:, :, :, ::1] decay):
    cdef Py_ssize_t n = x.shape[0], D = x.shape[1], L = x.shape[2], S = A.shape[1]
    cdef Py_ssize_t b, d, t, s
    gx_arr = np.empty((n, D, L))
    gdelta_arr = np.empty((n, D, L))
    gA_arr = np.zeros((D, S))
    gB_arr = np.zeros((n, L, S))
    gC_arr = np.zeros((n, L, S))
    carry_arr = np.empty(S)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] gdelta = gdelta_arr
    cdef double[:, ::1] gA = gA_arr
    cdef double[:, :, ::1] gB = gB_arr
    cdef double[:, :, ::1] gC = gC_arr
    cdef double[::1] carry = carry_arr
    cdef double dt, xt, gyt, a, gh, ga, hprev, sdelta, sx
    with nogil:
        for b in range(n):
            for d in range(D):
                for s in range(S):
                    carry[s] = 0.0
                for t in range(L - 1, -1, -1):
                    dt = delta[b, d, t]
                    xt = x[b, d, t]
                    gyt = gy[b, d, t]
                    sdelta = 0.0
                    sx = 0.0
                    for s in range(S):
                        a = decay[b, d, t, s]
                        hprev = hs[b, d, t - 1, s] if t > 0 else 0.0
                        gh = Ct[b, t, s] * gyt + carry[s]
                        gC[b, t, s] += gyt * hs[b, d, t, s]
                        ga = gh * hprev * a
                        sdelta = sdelta + ga * A[d, s] + gh * Bt[b, t, s] * xt
                        gA[d, s] += ga * dt
                        gB[b, t, s] += gh * dt * xt
                        sx = sx + gh * dt * Bt[b, t, s]
                        carry[s] = a * gh
                    gdelta[b, d, t] = sdelta
                    gx[b, d, t] = sx
    return gx_arr, gdelta_arr, gA_arr, gB_arr, gC_arr


def dwconv3x3_forward(double[:, :, :, ::1] x, double[:, :, ::1] k):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t b, ch, i, j, dy, dx, i0, i1, j0, j1, oy, ox
    y_arr = np.zeros((n, c, h, w))
    cdef double[:, :, :, ::1] y = y_arr
    cdef double kv
    with nogil:
        for b in range(n):
            for ch in range(c):
                for dy in range(3):
                    oy = dy - 1
                    i0 = 1 if oy < 0 else 0
                    i1 = h - 1 if oy > 0 else h
                    for dx in range(3):
                        ox = dx - 1
                        j0 = 1 if ox < 0 else 0
                        j1 = w - 1 if ox > 0 else w
                        kv = k[ch, dy, dx]
                        for i in range(i0, i1):
                            for j in range(j0, j1):
                                y[b, ch, i, j] += kv * x[b, ch, i + oy, j + ox]
    return y_arr


def dwconv3x3_backward(double[:, :, :, ::1] g, double[:, :, :, ::1] x, double[:, :, ::1] k):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t b, ch, i, j, dy, dx, i0, i1, j0, j1, oy, ox
    gx_arr = np.zeros((n, c, h, w))
    gk_arr = np.zeros((c, 3, 3))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] gk = gk_arr
    cdef double kv, acc
    with nogil:
        for b in range(n):
            for ch in range(c):
                for dy in range(3):
                    oy = dy - 1
                    i0 = 1 if oy < 0 else 0
                    i1 = h - 1 if oy > 0 else h
                    for dx in range(3):
                        ox = dx - 1
                        j0 = 1 if ox < 0 else 0
                        j1 = w - 1 if ox > 0 else w
                        kv = k[ch, dy, dx]
                        acc = 0.0
                        for i in range(i0, i1):
                            for j in range(j0, j1):
                                gx[b, ch, i + oy, j + ox] += kv * g[b, ch, i, j]
                                acc = acc + g[b, ch, i, j] * x[b, ch, i + oy, j + ox]
                        gk[ch, dy, dx] += acc
    return gx_arr, gk_arr
