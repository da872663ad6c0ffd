"""Rectified-flow primitives: linear corruption, the regression target,
uniform time sampling, Euler integration and per-modality guidance.

All functions are pure and safe to call concurrently on disjoint tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ScheduleError, ShapeError
from .tensor import Tensor, TensorLike, _as_tensor


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes differ, {a.shape} vs {b.shape}")


def corrupt(z0: TensorLike, z1: TensorLike, t: float) -> Tensor:
    """Linear interpolant (1-t)*z0 + t*z1 between clean latent and noise."""
    z0, z1 = _as_tensor(z0), _as_tensor(z1)
    _check_same_shape(z0, z1, "corrupt")
    if not 0.0 <= t <= 1.0:
        raise ScheduleError(f"corrupt: t={t} outside [0, 1]")
    if t == 0.0:
        return Tensor._wrap(z0.data.copy())
    if t == 1.0:
        return Tensor._wrap(z1.data.copy())
    return (1.0 - t) * z0 + t * z1


def fm_target(z0: TensorLike, z1: TensorLike) -> Tensor:
    """Velocity regression target z1 - z0 (the straight-flow displacement)."""
    z0, z1 = _as_tensor(z0), _as_tensor(z1)
    _check_same_shape(z0, z1, "fm_target")
    return z1 - z0


def sample_t(rng: np.random.Generator) -> float:
    """Draw the corruption time uniformly from [0, 1]."""
    return float(rng.random())


@dataclass(frozen=True)
class SamplerSchedule:
    """Strictly decreasing time sequence from exactly 1 to exactly 0."""

    times: tuple = field()

    def __post_init__(self):
        ts = tuple(float(t) for t in self.times)
        if len(ts) < 2:
            raise ScheduleError("schedule needs at least two time points")
        if ts[0] != 1.0 or ts[-1] != 0.0:
            raise ScheduleError(f"schedule endpoints must be 1 and 0, got {ts[0]}, {ts[-1]}")
        if any(b >= a for a, b in zip(ts, ts[1:])):
            raise ScheduleError("schedule must be strictly decreasing")
        object.__setattr__(self, "times", ts)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @classmethod
    def uniform(cls, n_steps: int) -> "SamplerSchedule":
        """Uniform grid with n_steps Euler steps from t=1 down to t=0."""
        if n_steps < 1:
            raise ScheduleError(f"need at least one step, got {n_steps}")
        return cls(tuple(i / n_steps for i in range(n_steps, -1, -1)))

    def pairs(self):
        """(t_i, t_prev) pairs walked during sampling, from t=1 downward."""
        return list(zip(self.times[:-1], self.times[1:]))


@dataclass(frozen=True)
class GuidanceConfig:
    """Classifier-free guidance scales, one per modality."""

    scale_video: float = 4.0
    scale_audio: float = 3.0

    def __post_init__(self):
        if self.scale_video < 0 or self.scale_audio < 0:
            raise ConfigError("guidance scales must be >= 0")


def euler_step(z: TensorLike, v: TensorLike, t_i: float, t_prev: float) -> Tensor:
    """One backward Euler step: z + (t_prev - t_i) * v, with t_prev < t_i."""
    z, v = _as_tensor(z), _as_tensor(v)
    _check_same_shape(z, v, "euler_step")
    if t_prev >= t_i:
        raise ScheduleError(f"euler_step: t_prev={t_prev} must be below t_i={t_i}")
    return z + (t_prev - t_i) * v


def guided_velocity(v_cond: TensorLike, v_uncond: TensorLike, scale: float) -> Tensor:
    """Extrapolate from the unconditional toward the conditional velocity."""
    v_cond, v_uncond = _as_tensor(v_cond), _as_tensor(v_uncond)
    _check_same_shape(v_cond, v_uncond, "guided_velocity")
    if scale == 1.0:
        return Tensor._wrap(v_cond.data.copy())
    return v_uncond + scale * (v_cond - v_uncond)
