"""Reference conditioning: LoRA-augmented projections for reference tokens,
one-directional joint attention, and global face/timbre condition tokens.

Reference tokens attend only among themselves; original tokens attend the
concatenation of original and reference keys/values. Blocking the reference
columns (mask_refs) reproduces the "without reference" branch used both as
the contrastive negative and the guidance unconditional pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attention import AttentionMask, ProjectionWeights, RotaryTable, attend, qkv_project, rope_apply
from .errors import ShapeError
from .tensor import Tensor, TensorLike, _as_tensor, add, concat, matmul, reshape

FACE_DIM = 512
TIMBRE_DIM = 256

LORA_INIT_STD = 0.02


@dataclass
class LoraAdapter:
    """Low-rank trainable delta for one frozen projection.

    Tokens are rows here, so the delta applied to x is (x @ down) @ up with
    down (d, n) and up (n, d); the composed matrix has rank <= n. `up` starts
    at zero so a fresh adapter changes nothing.
    """

    down: Tensor
    up: Tensor
    scaling: float = 1.0

    def __post_init__(self):
        d, n = self.down.shape
        if self.up.shape != (n, d):
            raise ShapeError(
                f"adapter shapes disagree: down {self.down.shape}, up {self.up.shape}"
            )

    @property
    def rank(self) -> int:
        return self.down.shape[1]

    @property
    def n_params(self) -> int:
        return self.down.size + self.up.size

    @classmethod
    def init(cls, d: int, rank: int, rng: np.random.Generator) -> "LoraAdapter":
        down = Tensor(rng.normal(0.0, LORA_INIT_STD, (d, rank)), grad_required=True)
        up = Tensor(np.zeros((rank, d)), grad_required=True)
        return cls(down, up)

    def apply(self, x: TensorLike, w: Tensor) -> Tensor:
        """x @ (w + down @ up), kept factored so the delta stays low-rank."""
        base = matmul(x, w)
        delta = matmul(matmul(x, self.down), self.up)
        if self.scaling != 1.0:
            delta = self.scaling * delta
        return add(base, delta)


@dataclass
class LoraSet:
    """The four adapters of one self-attention site: Q, K, V and output."""

    q: LoraAdapter
    k: LoraAdapter
    v: LoraAdapter
    out: LoraAdapter

    @classmethod
    def init(cls, d: int, rank: int, rng: np.random.Generator) -> "LoraSet":
        return cls(*[LoraAdapter.init(d, rank, rng) for _ in range(4)])

    @property
    def n_params(self) -> int:
        return sum(a.n_params for a in (self.q, self.k, self.v, self.out))


def lora_project(x_r: TensorLike, w: ProjectionWeights, adapters: LoraSet):
    """Reference-token Q/K/V through the frozen maps plus their LoRA deltas."""
    x_r = _as_tensor(x_r)
    if x_r.data.ndim != 2 or x_r.data.shape[1] != w.width:
        raise ShapeError(f"lora_project: need (seq, {w.width}) input, got {x_r.shape}")
    for a in (adapters.q, adapters.k, adapters.v):
        if a.down.shape[0] != w.width:
            raise ShapeError(f"lora_project: adapter width {a.down.shape[0]} != {w.width}")
    q = adapters.q.apply(x_r, w.w_q)
    k = adapters.k.apply(x_r, w.w_k)
    v = adapters.v.apply(x_r, w.w_v)
    return q, k, v


def joint_self_attention(
    x: TensorLike,
    x_r: Optional[TensorLike],
    w: ProjectionWeights,
    adapters: LoraSet,
    mask_refs: bool = False,
    positions=None,
    ref_positions=None,
    rope_table: Optional[RotaryTable] = None,
):
    """One-directional joint attention over original and reference tokens.

    Original tokens attend [keys; reference keys] (reference columns blocked
    when mask_refs); reference tokens attend only themselves. The original
    stream leaves through the frozen output map, the reference stream through
    the LoRA-augmented one. Returns (z_out, zr_out); zr_out is None when
    there are no reference tokens.
    """
    x = _as_tensor(x)
    q, k, v = qkv_project(x, w)
    if rope_table is not None:
        q = rope_apply(q, positions, rope_table)
        k = rope_apply(k, positions, rope_table)

    seq = x.data.shape[0]
    if x_r is None or _as_tensor(x_r).data.shape[0] == 0:
        z = attend(q, k, v)
        return matmul(z, w.w_o), None

    x_r = _as_tensor(x_r)
    qr, kr, vr = lora_project(x_r, w, adapters)
    if rope_table is not None:
        qr = rope_apply(qr, ref_positions, rope_table)
        kr = rope_apply(kr, ref_positions, rope_table)

    seq_r = x_r.data.shape[0]
    mask = None
    if mask_refs:
        allowed = np.ones((seq, seq + seq_r), dtype=bool)
        allowed[:, seq:] = False
        mask = AttentionMask(allowed)
    z = attend(q, concat([k, kr], axis=0), concat([v, vr], axis=0), mask)
    zr = attend(qr, kr, vr)
    return matmul(z, w.w_o), adapters.out.apply(zr, w.w_o)


@dataclass
class GlobalConditionEmbedding:
    """Trainable maps from identity/timbre vectors to one global token each."""

    proj_face: Tensor
    proj_timbre: Tensor

    def __post_init__(self):
        if self.proj_face.shape[0] != FACE_DIM:
            raise ShapeError(f"face projection must take {FACE_DIM}-D input")
        if self.proj_timbre.shape[0] != TIMBRE_DIM:
            raise ShapeError(f"timbre projection must take {TIMBRE_DIM}-D input")

    @classmethod
    def init(cls, d: int, rng: np.random.Generator) -> "GlobalConditionEmbedding":
        return cls(
            Tensor(rng.normal(0.0, LORA_INIT_STD, (FACE_DIM, d)), grad_required=True),
            Tensor(rng.normal(0.0, LORA_INIT_STD, (TIMBRE_DIM, d)), grad_required=True),
        )

    @property
    def n_params(self) -> int:
        return self.proj_face.size + self.proj_timbre.size

    def face_token(self, face_vec) -> Tensor:
        return embed_global_condition(face_vec, self.proj_face)

    def timbre_token(self, timbre_vec) -> Tensor:
        return embed_global_condition(timbre_vec, self.proj_timbre)


def embed_global_condition(vec: TensorLike, proj: Tensor) -> Tensor:
    """Project an identity/timbre vector to a single (1, d) condition token."""
    vec = _as_tensor(vec)
    if vec.data.ndim != 1 or vec.data.shape[0] != proj.shape[0]:
        raise ShapeError(
            f"embed_global_condition: vector {vec.shape} does not match "
            f"projection input {proj.shape[0]}"
        )
    tok = matmul(vec, proj)
    return reshape(tok, (1, proj.shape[1]))


class EmbeddingProvider:
    """Source of (face_vec[512], timbre_vec[256]) pairs for a record id."""

    def embeddings(self, record_id) -> tuple:
        raise NotImplementedError

    def face(self, record_id) -> np.ndarray:
        return self.embeddings(record_id)[0]

    def timbre(self, record_id) -> np.ndarray:
        return self.embeddings(record_id)[1]


class SyntheticEmbeddingProvider(EmbeddingProvider):
    """Deterministic stand-in for real extractors: each record id hashes to a
    fixed unit-variance Gaussian vector, stable across runs and platforms."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)

    def _vector(self, record_id, dim: int, stream: int) -> np.ndarray:
        rid = int(record_id)
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, stream, rid]))
        return rng.normal(0.0, 1.0, dim)

    def embeddings(self, record_id) -> tuple:
        return (
            self._vector(record_id, FACE_DIM, 0),
            self._vector(record_id, TIMBRE_DIM, 1),
        )
