"""Single-head scaled-dot-product attention shared by every branch.

Tokens are rows: a sequence is (seq, d) and projections multiply on the
right, Q = x @ W_Q. Masking is additive -inf before the softmax, so blocked
keys carry exactly zero weight. Rotary embeddings rotate channel pairs by
position-proportional angles, which makes Q.K products depend only on
relative positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels as K
from .errors import ConfigError, ContractError, ShapeError
from .tensor import (
    Tensor,
    TensorLike,
    _as_tensor,
    _node_of,
    _record,
    active_tape,
    add,
    matmul,
    softmax_lastdim,
    transpose,
)


@dataclass
class ProjectionWeights:
    """Frozen d x d query/key/value/output maps for one attention site."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor

    def __post_init__(self):
        d = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v", "w_o"):
            w = getattr(self, name)
            if w.shape != (d, d):
                raise ShapeError(f"{name} must be square of width {d}, got {w.shape}")

    @property
    def width(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, grad_required: bool = False):
        std = 1.0 / math.sqrt(d)
        return cls(*[Tensor(rng.normal(0.0, std, (d, d)), grad_required) for _ in range(4)])


class RotaryTable:
    """Precomputed cos/sin rotation angles m * theta_j for d/2 channels."""

    def __init__(self, d: int, max_pos: int, base: float = 10000.0):
        if d % 2 != 0:
            raise ConfigError(f"rotary width must be even, got {d}")
        if max_pos < 1:
            raise ConfigError(f"rotary table needs max_pos >= 1, got {max_pos}")
        self.d = d
        self.max_pos = max_pos
        self.base = base
        freqs = base ** (-np.arange(0, d, 2, dtype=np.float64) / d)  # (d/2,)
        angles = np.outer(np.arange(max_pos, dtype=np.float64), freqs)
        self.cos = np.ascontiguousarray(np.cos(angles))
        self.sin = np.ascontiguousarray(np.sin(angles))


def rope_apply(x: TensorLike, positions, table: RotaryTable) -> Tensor:
    """Rotate each row's channel pairs by its position's angles."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"rope_apply: need (seq, d) input, got {x.shape}")
    if x.data.shape[1] != table.d:
        raise ConfigError(f"rope_apply: width {x.data.shape[1]} != table width {table.d}")
    pos = np.asarray(positions, dtype=np.int64)
    if pos.shape != (x.data.shape[0],):
        raise ShapeError(f"rope_apply: need one position per row, got {pos.shape}")
    if pos.min(initial=0) < 0 or (len(pos) and pos.max() >= table.max_pos):
        raise ContractError("rope_apply: position outside table range")
    out_data = K.rope_rotate(np.ascontiguousarray(x.data), pos, table.cos, table.sin, 1.0)
    tape = active_tape()
    if tape is None:
        return Tensor._wrap(out_data)
    nx = _node_of(x, tape)
    if nx is None:
        return Tensor._wrap(out_data)

    def pull(g):
        # The transpose of a rotation is the rotation by the negated angle.
        return (K.rope_rotate(np.ascontiguousarray(g), pos, table.cos, table.sin, -1.0),)

    return _record(out_data, tape, (nx,), pull)


@dataclass(frozen=True)
class AttentionMask:
    """Boolean (queries x keys) matrix; True marks attendable positions."""

    allowed: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.allowed, dtype=bool)
        if arr.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got shape {arr.shape}")
        if not arr.any(axis=1).all():
            raise ContractError("attention mask has a fully blocked query row")
        object.__setattr__(self, "allowed", arr)

    def additive(self) -> np.ndarray:
        """0 where attendable, -inf where blocked."""
        out = np.zeros(self.allowed.shape)
        out[~self.allowed] = -np.inf
        return out


def attend(q: TensorLike, k: TensorLike, v: TensorLike,
           mask: Optional[AttentionMask] = None) -> Tensor:
    """softmax(q k^T / sqrt(d)) v with optional additive -inf masking."""
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if k.data.shape[0] != v.data.shape[0]:
        raise ShapeError(f"attend: key/value lengths differ, {k.shape} vs {v.shape}")
    if q.data.shape[1] != k.data.shape[1]:
        raise ShapeError(f"attend: query/key widths differ, {q.shape} vs {k.shape}")
    d = q.data.shape[1]
    scores = (1.0 / math.sqrt(d)) * matmul(q, transpose(k))
    if mask is not None:
        if mask.allowed.shape != (q.data.shape[0], k.data.shape[0]):
            raise ShapeError(
                f"attend: mask shape {mask.allowed.shape} does not match "
                f"({q.data.shape[0]}, {k.data.shape[0]})"
            )
        scores = add(scores, mask.additive())
    weights = softmax_lastdim(scores)
    return matmul(weights, v)


def qkv_project(x: TensorLike, w: ProjectionWeights):
    """Project a (seq, d) sequence to query/key/value features."""
    x = _as_tensor(x)
    if x.data.ndim != 2 or x.data.shape[1] != w.width:
        raise ShapeError(f"qkv_project: need (seq, {w.width}) input, got {x.shape}")
    return matmul(x, w.w_q), matmul(x, w.w_k), matmul(x, w.w_v)


def cross_attend(x_q: TensorLike, x_kv: TensorLike, w: ProjectionWeights) -> Tensor:
    """Queries from one stream attend keys/values of another; no RoPE here.

    Returns the attended value mix; callers apply w.w_o where the sublayer
    needs an output projection.
    """
    x_q, x_kv = _as_tensor(x_q), _as_tensor(x_kv)
    if x_q.data.shape[1] != w.width or x_kv.data.shape[1] != w.width:
        raise ShapeError(
            f"cross_attend: widths {x_q.shape}/{x_kv.shape} do not match {w.width}"
        )
    q = matmul(x_q, w.w_q)
    k = matmul(x_kv, w.w_k)
    v = matmul(x_kv, w.w_v)
    return attend(q, k, v)
