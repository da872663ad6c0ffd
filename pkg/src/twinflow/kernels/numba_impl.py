"""Numba-JIT implementations of the hot inner kernels.

Fused loops over C-contiguous float64 arrays; one call per kernel instead of
a chain of NumPy temporaries. No parallel=True / fastmath: updates must stay
deterministic so seeded runs are bit-reproducible.
"""

import math

import numpy as np
from numba import njit

GELU_C1 = math.sqrt(2.0 / math.pi)
GELU_C2 = 0.044715


@njit(cache=True)
def softmax_rows(x):
    r, c = x.shape
    out = np.empty((r, c))
    for i in range(r):
        m = x[i, 0]
        for j in range(1, c):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(c):
            e = math.exp(x[i, j] - m)
            out[i, j] = e
            s += e
        inv = 1.0 / s
        for j in range(c):
            out[i, j] *= inv
    return out


@njit(cache=True)
def softmax_rows_grad(y, g):
    r, c = y.shape
    out = np.empty((r, c))
    for i in range(r):
        s = 0.0
        for j in range(c):
            s += g[i, j] * y[i, j]
        for j in range(c):
            out[i, j] = y[i, j] * (g[i, j] - s)
    return out


@njit(cache=True)
def layernorm_rows(x, eps):
    r, c = x.shape
    out = np.empty((r, c))
    rstd = np.empty(r)
    for i in range(r):
        mu = 0.0
        for j in range(c):
            mu += x[i, j]
        mu /= c
        var = 0.0
        for j in range(c):
            d = x[i, j] - mu
            var += d * d
        var /= c
        rs = 1.0 / math.sqrt(var + eps)
        rstd[i] = rs
        for j in range(c):
            out[i, j] = (x[i, j] - mu) * rs
    return out, rstd


@njit(cache=True)
def layernorm_rows_grad(y, rstd, g):
    r, c = y.shape
    out = np.empty((r, c))
    for i in range(r):
        gm = 0.0
        gym = 0.0
        for j in range(c):
            gm += g[i, j]
            gym += g[i, j] * y[i, j]
        gm /= c
        gym /= c
        for j in range(c):
            out[i, j] = rstd[i] * (g[i, j] - gm - y[i, j] * gym)
    return out


@njit(cache=True)
def gelu(x):
    n = x.shape[0]
    out = np.empty(n)
    for i in range(n):
        xi = x[i]
        inner = GELU_C1 * (xi + GELU_C2 * xi * xi * xi)
        out[i] = 0.5 * xi * (1.0 + math.tanh(inner))
    return out


@njit(cache=True)
def gelu_grad(x, g):
    n = x.shape[0]
    out = np.empty(n)
    for i in range(n):
        xi = x[i]
        inner = GELU_C1 * (xi + GELU_C2 * xi * xi * xi)
        t = math.tanh(inner)
        dinner = GELU_C1 * (1.0 + 3.0 * GELU_C2 * xi * xi)
        out[i] = g[i] * (0.5 * (1.0 + t) + 0.5 * xi * (1.0 - t * t) * dinner)
    return out


@njit(cache=True)
def rope_rotate(x, pos, cos, sin, sign):
    r, d = x.shape
    half = d // 2
    out = np.empty((r, d))
    for i in range(r):
        p = pos[i]
        for j in range(half):
            c = cos[p, j]
            s = sign * sin[p, j]
            xe = x[i, 2 * j]
            xo = x[i, 2 * j + 1]
            out[i, 2 * j] = xe * c - xo * s
            out[i, 2 * j + 1] = xe * s + xo * c
    return out


@njit(cache=True)
def adamw_update(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bias_c1, bias_c2):
    n = p.shape[0]
    for i in range(n):
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        m_hat = m[i] / bias_c1
        v_hat = v[i] / bias_c2
        p[i] -= lr * (m_hat / (math.sqrt(v_hat) + eps) + weight_decay * p[i])
