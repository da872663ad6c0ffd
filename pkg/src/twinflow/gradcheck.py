"""Finite-difference verification of the end-to-end training gradient.

The oracle never touches the tape: it re-evaluates the loss off-tape with one
entry nudged by +/-h and takes the central difference. Errors are reported
per parameter as max |analytic - fd| over the parameter's gradient scale.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .config import RunConfig
from .errors import ContractError
from .fusion import TwinBackbone, model_forward
from .objectives import (
    LossWeights,
    build_negative_pass,
    contrastive_loss,
    fm_loss,
    total_loss,
)
from .reflora import SyntheticEmbeddingProvider
from .tensor import Tape, backward, no_grad
from .trainer import SyntheticBatch, batch_to_inputs, synthetic_batches

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4


def finite_difference_gradients(loss_fn: Callable[[], float], params: dict,
                                h: float = DEFAULT_STEP,
                                max_entries: Optional[int] = None,
                                rng: Optional[np.random.Generator] = None) -> dict:
    """Central-difference gradient of loss_fn per named parameter.

    Returns {name: (indices, values)} over flat indices; all entries unless
    max_entries subsamples (seeded rng required then).
    """
    out = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.shape[0]
        if max_entries is not None and n > max_entries:
            if rng is None:
                raise ContractError("subsampled gradcheck needs a seeded rng")
            idx = np.sort(rng.choice(n, size=max_entries, replace=False))
        else:
            idx = np.arange(n)
        vals = np.empty(idx.shape[0])
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = loss_fn()
            flat[i] = orig - h
            f_minus = loss_fn()
            flat[i] = orig
            vals[j] = (f_plus - f_minus) / (2.0 * h)
        out[name] = (idx, vals)
    return out


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    tolerance: float
    passed: bool
    per_param: dict
    n_params_checked: int
    elapsed_s: float

    def to_dict(self) -> dict:
        return {
            "max_rel_err": self.max_rel_err,
            "worst_param": self.worst_param,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "per_param": self.per_param,
            "n_params_checked": self.n_params_checked,
            "elapsed_s": self.elapsed_s,
        }


def compare_gradients(analytic: dict, fd: dict,
                      tolerance: float = DEFAULT_TOLERANCE,
                      elapsed_s: float = 0.0) -> GradCheckReport:
    """Per-parameter relative error of analytic vs finite-difference grads."""
    per_param = {}
    worst_name = ""
    worst = 0.0
    n_checked = 0
    for name, (idx, fd_vals) in fd.items():
        a_vals = analytic[name].reshape(-1)[idx]
        scale = max(np.max(np.abs(a_vals)), np.max(np.abs(fd_vals)), 1e-12)
        err = float(np.max(np.abs(a_vals - fd_vals)) / scale)
        per_param[name] = err
        n_checked += idx.shape[0]
        if err > worst:
            worst = err
            worst_name = name
    return GradCheckReport(
        max_rel_err=worst,
        worst_param=worst_name,
        tolerance=tolerance,
        passed=worst < tolerance,
        per_param=per_param,
        n_params_checked=n_checked,
        elapsed_s=elapsed_s,
    )


def tiny_gradcheck_config(seed: int = 0) -> RunConfig:
    """The depth-2, width-16, rank-4 twin used by the end-to-end check."""
    return RunConfig(
        depth=2, width=16, d_in=6, seq_video=4, seq_audio=4,
        seq_ref_video=2, seq_ref_audio=2, seq_text=2, n_text_templates=4,
        lora_rank=4, mlp_ratio=2, seed=seed,
    )


def full_loss_fn(model: TwinBackbone, batch: SyntheticBatch,
                 weights: LossWeights, provider) -> Callable[[], float]:
    """Closure evaluating the full two-pass objective off-tape.

    The unconditional velocities are evaluated once, at the current weights,
    and held fixed inside the closure: that is the function whose gradient
    the stop-grad objective defines, so it is what central differences must
    difference.
    """
    inputs = batch_to_inputs(batch, provider)
    neg = build_negative_pass(inputs)
    with no_grad():
        u_v0, u_a0 = model_forward(model, neg)

    def loss_fn() -> float:
        with no_grad():
            v_v, v_a = model_forward(model, inputs)
            cl_i = contrastive_loss(v_v, u_v0)
            cl_a = contrastive_loss(v_a, u_a0)
            l_v = fm_loss(v_v, batch.z0_video, batch.z1_video)
            l_a = fm_loss(v_a, batch.z0_audio, batch.z1_audio)
            total, _ = total_loss(l_v, l_a, cl_i, cl_a, weights)
            return total.item()

    return loss_fn


def analytic_gradients(model: TwinBackbone, batch: SyntheticBatch,
                       weights: LossWeights, provider) -> dict:
    """Tape gradients of the full objective, keyed by parameter name."""
    inputs = batch_to_inputs(batch, provider)
    neg = build_negative_pass(inputs)
    with Tape():
        v_v, v_a = model_forward(model, inputs)
        with no_grad():
            u_v, u_a = model_forward(model, neg)
        cl_i = contrastive_loss(v_v, u_v)
        cl_a = contrastive_loss(v_a, u_a)
        l_v = fm_loss(v_v, batch.z0_video, batch.z1_video)
        l_a = fm_loss(v_a, batch.z0_audio, batch.z1_audio)
        total, _ = total_loss(l_v, l_a, cl_i, cl_a, weights)
        grads = backward(total)
    by_tensor = {t: g for t, g in grads.items()}
    out = {}
    for name, p in model.trainable_parameters().items():
        out[name] = by_tensor.get(p, np.zeros(p.data.shape))
    return out


def run_gradcheck(config: Optional[RunConfig] = None,
                  tolerance: float = DEFAULT_TOLERANCE,
                  max_entries: Optional[int] = None,
                  h: float = DEFAULT_STEP) -> GradCheckReport:
    """Build the tiny twin, randomize its trainables, and compare gradients.

    Trainables are perturbed away from the zero-init point first; otherwise
    the LoRA down-projections sit at an exactly-zero-gradient saddle and the
    comparison is vacuous there.
    """
    from .trainer import build_model

    config = config or tiny_gradcheck_config()
    t0 = time.perf_counter()
    model = build_model(config)
    jitter = np.random.default_rng(np.random.SeedSequence([config.seed, 13]))
    for p in model.trainable_parameters().values():
        p.data = p.data + 0.05 * jitter.normal(0.0, 1.0, p.data.shape)
    provider = SyntheticEmbeddingProvider(config.seed)
    batch = next(synthetic_batches(config, np.random.default_rng(
        np.random.SeedSequence([config.seed, 17]))))
    weights = LossWeights(
        fm_video=config.lambda_fm_video, fm_audio=config.lambda_fm_audio,
        cl_identity=config.lambda_cl_identity, cl_timbre=config.lambda_cl_timbre,
    )
    analytic = analytic_gradients(model, batch, weights, provider)
    loss_fn = full_loss_fn(model, batch, weights, provider)
    sub_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 19]))
    fd = finite_difference_gradients(loss_fn, model.trainable_parameters(),
                                     h=h, max_entries=max_entries, rng=sub_rng)
    return compare_gradients(analytic, fd, tolerance=tolerance,
                             elapsed_s=time.perf_counter() - t0)
