"""Pure-NumPy implementations of the hot inner kernels.

Reference semantics for the numba backend: both backends must compute the
same math on C-contiguous float64 arrays. Selected via TWINFLOW_BACKEND=numpy.
"""

import numpy as np

GELU_C1 = np.sqrt(2.0 / np.pi)
GELU_C2 = 0.044715


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-stabilized softmax over the last axis of a 2-D array."""
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_grad(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Backward of softmax_rows: gx = y * (g - sum(g*y, axis=1))."""
    s = (g * y).sum(axis=1, keepdims=True)
    return y * (g - s)


def layernorm_rows(x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Normalize each row to zero mean / unit variance. Returns (y, rstd)."""
    inv_n = 1.0 / x.shape[1]
    mu = x.sum(axis=1, keepdims=True) * inv_n
    xc = x - mu
    var = (xc * xc).sum(axis=1) * inv_n
    rstd = 1.0 / np.sqrt(var + eps)
    return xc * rstd[:, None], rstd


def layernorm_rows_grad(y: np.ndarray, rstd: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Backward of layernorm_rows given the normalized output y."""
    inv_n = 1.0 / y.shape[1]
    gm = g.sum(axis=1, keepdims=True) * inv_n
    gym = (g * y).sum(axis=1, keepdims=True) * inv_n
    return rstd[:, None] * (g - gm - y * gym)


def gelu(x: np.ndarray) -> np.ndarray:
    """tanh-form GELU on a 1-D array."""
    inner = GELU_C1 * (x + GELU_C2 * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_grad(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Backward of the tanh-form GELU."""
    inner = GELU_C1 * (x + GELU_C2 * x * x * x)
    t = np.tanh(inner)
    dinner = GELU_C1 * (1.0 + 3.0 * GELU_C2 * x * x)
    return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def rope_rotate(x: np.ndarray, pos: np.ndarray, cos: np.ndarray,
                sin: np.ndarray, sign: float) -> np.ndarray:
    """Rotate channel pairs (2j, 2j+1) of each row by sign * angle[pos, j]."""
    c = cos[pos]
    s = sign * sin[pos]
    xe = x[:, 0::2]
    xo = x[:, 1::2]
    out = np.empty_like(x)
    out[:, 0::2] = xe * c - xo * s
    out[:, 1::2] = xe * s + xo * c
    return out


def adamw_update(p: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray,
                 lr: float, beta1: float, beta2: float, eps: float,
                 weight_decay: float, bias_c1: float, bias_c2: float) -> None:
    """In-place decoupled-weight-decay Adam step on flat float64 arrays."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    m_hat = m / bias_c1
    v_hat = v / bias_c2
    p -= lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p)
