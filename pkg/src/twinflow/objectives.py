"""The four training objectives and their weighted combination.

Flow matching pulls the predicted velocity toward the straight-flow target
per modality; the contrastive terms push the reference-conditioned velocity
away from the reference-blocked one. Callers must gradient-detach the
unconditional velocity (stop_grad or an off-tape forward) before it enters
`contrastive_loss` - gradient flows only through the conditional branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .fusion import ModelInputs
from .reflora import FACE_DIM, TIMBRE_DIM
from .tensor import Tensor, TensorLike, _as_tensor, clamp_max, mean, mul, sub

LOSS_LOG_HEADER = "step\tfm_video\tfm_audio\tcl_identity\tcl_timbre\ttotal"


@dataclass(frozen=True)
class LossWeights:
    """Scalar weights of the four loss terms; defaults follow training
    practice for this objective (1, 1, 0.1, 0.1)."""

    fm_video: float = 1.0
    fm_audio: float = 1.0
    cl_identity: float = 0.1
    cl_timbre: float = 0.1

    def __post_init__(self):
        for name in ("fm_video", "fm_audio", "cl_identity", "cl_timbre"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"loss weight '{name}' must be finite")


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term values of one training step, for logging."""

    fm_video: float
    fm_audio: float
    cl_identity: float
    cl_timbre: float
    total: float


def fm_loss(v_pred: Tensor, z0: TensorLike, z1: TensorLike) -> Tensor:
    """Mean squared error between the prediction and the target z1 - z0."""
    z0, z1 = _as_tensor(z0), _as_tensor(z1)
    if z0.data.shape != z1.data.shape or v_pred.data.shape != z0.data.shape:
        raise ShapeError(
            f"fm_loss: shapes differ, pred {v_pred.shape}, z0 {z0.shape}, z1 {z1.shape}"
        )
    diff = sub(v_pred, Tensor(z1.data - z0.data))
    return mean(mul(diff, diff))


def contrastive_loss(v_cond: Tensor, v_uncond: Tensor,
                     clamp: float = 0.0) -> Tensor:
    """Negated mean squared separation; more negative = better separated.

    v_uncond must already be gradient-detached by the caller. A positive
    `clamp` caps the squared separation (the raw objective is unbounded
    below); 0 leaves it off.
    """
    if v_cond.data.shape != v_uncond.data.shape:
        raise ShapeError(
            f"contrastive_loss: shapes differ, {v_cond.shape} vs {v_uncond.shape}"
        )
    diff = sub(v_cond, v_uncond)
    msq = mean(mul(diff, diff))
    if clamp > 0.0:
        msq = clamp_max(msq, clamp)
    return mul(msq, -1.0)


def build_negative_pass(inputs: ModelInputs) -> ModelInputs:
    """The "without reference" twin of a batch: reference attention masked
    and both global embeddings zeroed; latents, t and text untouched."""
    return replace(
        inputs,
        mask_refs=True,
        face_vec=np.zeros(FACE_DIM) if inputs.face_vec is not None else None,
        timbre_vec=np.zeros(TIMBRE_DIM) if inputs.timbre_vec is not None else None,
    )


def total_loss(
    fm_video: Tensor,
    fm_audio: Tensor,
    cl_identity: Optional[Tensor],
    cl_timbre: Optional[Tensor],
    weights: LossWeights,
):
    """Weighted sum of the terms. Returns (scalar tensor, LossBreakdown)."""
    total = mul(fm_video, weights.fm_video) + mul(fm_audio, weights.fm_audio)
    if cl_identity is not None:
        total = total + mul(cl_identity, weights.cl_identity)
    if cl_timbre is not None:
        total = total + mul(cl_timbre, weights.cl_timbre)
    breakdown = LossBreakdown(
        fm_video=fm_video.item(),
        fm_audio=fm_audio.item(),
        cl_identity=cl_identity.item() if cl_identity is not None else 0.0,
        cl_timbre=cl_timbre.item() if cl_timbre is not None else 0.0,
        total=total.item(),
    )
    return total, breakdown


def format_loss_line(step: int, bd: LossBreakdown) -> str:
    """One tab-separated loss-log line, full float precision."""
    return (f"{step}\t{bd.fm_video!r}\t{bd.fm_audio!r}\t{bd.cl_identity!r}\t"
            f"{bd.cl_timbre!r}\t{bd.total!r}")
