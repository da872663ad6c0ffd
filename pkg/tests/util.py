"""Shared oracles for the test suite.

The finite-difference helper is deliberately independent of the tape: it
re-evaluates a plain float-valued closure with entries nudged by +/-h.
"""

import numpy as np

from twinflow.tensor import no_grad


def fd_gradient(loss_fn, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of loss_fn() w.r.t. the entries of arr.

    loss_fn must read arr by reference (mutations are visible to it).
    """
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        with no_grad():
            f_plus = loss_fn()
        flat[i] = orig - h
        with no_grad():
            f_minus = loss_fn()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    """Max elementwise error over the gradient's max-norm scale."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(fd)), 1e-12)
    return float(np.max(np.abs(analytic - fd)) / scale)


def brute_force_attention(q, k, v, allowed=None):
    """Loop-level attention oracle: softmax(q k^T / sqrt(d)) v, optional mask."""
    d = q.shape[1]
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        scores = np.array([q[i] @ k[j] / np.sqrt(d) for j in range(k.shape[0])])
        if allowed is not None:
            scores = np.where(allowed[i], scores, -np.inf)
        m = scores.max()
        w = np.exp(scores - m)
        w = w / w.sum()
        for j in range(k.shape[0]):
            out[i] += w[j] * v[j]
    return out
