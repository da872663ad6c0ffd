"""AdamW over the trainable partition, the two-pass training step, synthetic
paired-latent data, and checkpointing.

Synthetic clips are Gaussian mixture draws: each identity (video) and timbre
(audio) id owns a fixed cluster mean, clean latents and reference tokens are
separate draws from the same component, so a reference shares the cluster
but never the content of its training clip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from . import kernels as K
from .checkpoint import CheckpointData, load_container, save_container
from .config import RunConfig
from .errors import ConfigError, ContractError, NumericError, TrainingDiverged
from .flowmatch import corrupt, sample_t
from .fusion import ModelInputs, TwinBackbone, model_forward
from .objectives import (
    LossBreakdown,
    LossWeights,
    build_negative_pass,
    contrastive_loss,
    fm_loss,
    total_loss,
)
from .reflora import EmbeddingProvider, SyntheticEmbeddingProvider
from .tensor import Tape, backward, no_grad, stop_grad

# Fixed entropy tags so cluster means depend only on (seed, kind, id).
_MEAN_STREAM_VIDEO = 101
_MEAN_STREAM_AUDIO = 102


@dataclass
class AdamWConfig:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def from_run_config(cls, cfg: RunConfig) -> "AdamWConfig":
        return cls(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                   eps=cfg.adam_eps, weight_decay=cfg.weight_decay)


class AdamW:
    """Decoupled-weight-decay Adam with bias correction over named tensors.

    Only grad-required parameters may be registered; moments live per name so
    state round-trips through checkpoints.
    """

    def __init__(self, params: dict, config: AdamWConfig = AdamWConfig()):
        for name, p in params.items():
            if not p.grad_required:
                raise ContractError(f"parameter '{name}' is frozen; not optimizable")
        self.params = dict(params)
        self.config = config
        self.step_count = 0
        self.m = {name: np.zeros(p.data.shape) for name, p in self.params.items()}
        self.v = {name: np.zeros(p.data.shape) for name, p in self.params.items()}

    def step(self, grads: dict) -> None:
        """Apply one update; missing names are treated as zero gradients."""
        self.step_count += 1
        c = self.config
        bc1 = 1.0 - c.beta1 ** self.step_count
        bc2 = 1.0 - c.beta2 ** self.step_count
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros(p.data.shape)
            g = np.ascontiguousarray(np.asarray(g, dtype=np.float64))
            if g.shape != p.data.shape:
                raise ContractError(f"gradient for '{name}': shape {g.shape} != {p.data.shape}")
            K.adamw_update(p.data.reshape(-1), g.reshape(-1),
                           self.m[name].reshape(-1), self.v[name].reshape(-1),
                           c.lr, c.beta1, c.beta2, c.eps, c.weight_decay, bc1, bc2)

    def state(self) -> dict:
        return {"step_count": self.step_count,
                "hyper": {"lr": self.config.lr, "beta1": self.config.beta1,
                          "beta2": self.config.beta2, "eps": self.config.eps,
                          "weight_decay": self.config.weight_decay},
                "m": {n: a.copy() for n, a in self.m.items()},
                "v": {n: a.copy() for n, a in self.v.items()}}

    def load_state(self, state: dict) -> None:
        if set(state["m"]) != set(self.m) or set(state["v"]) != set(self.v):
            raise ContractError("optimizer state names do not match the model")
        self.step_count = int(state["step_count"])
        if state.get("hyper") is not None:
            h = state["hyper"]
            self.config = AdamWConfig(lr=h["lr"], beta1=h["beta1"], beta2=h["beta2"],
                                      eps=h["eps"], weight_decay=h["weight_decay"])
        for n in self.m:
            self.m[n] = np.ascontiguousarray(state["m"][n], dtype=np.float64)
            self.v[n] = np.ascontiguousarray(state["v"][n], dtype=np.float64)


# ---------------------------------------------------------------------------
# Synthetic paired data
# ---------------------------------------------------------------------------


@dataclass
class SyntheticBatch:
    """One clip worth of planted-cluster latents plus its reference tokens."""

    z0_video: np.ndarray
    z0_audio: np.ndarray
    video_refs: np.ndarray
    audio_refs: np.ndarray
    identity_id: int
    timbre_id: int
    text_id: int
    z1_video: np.ndarray
    z1_audio: np.ndarray
    t: float


def cluster_mean(kind: str, cluster_id: int, d_in: int, sigma_between: float,
                 seed: int) -> np.ndarray:
    """The fixed mixture mean of one identity/timbre cluster."""
    stream = _MEAN_STREAM_VIDEO if kind == "video" else _MEAN_STREAM_AUDIO
    rng = np.random.default_rng(np.random.SeedSequence([seed, stream, int(cluster_id)]))
    return sigma_between * rng.normal(0.0, 1.0, d_in)


def cluster_means(kind: str, n: int, config: RunConfig) -> np.ndarray:
    return np.stack([
        cluster_mean(kind, i, config.d_in, config.sigma_between, config.seed)
        for i in range(n)
    ])


def synthetic_batches(config: RunConfig, rng: np.random.Generator) -> Iterator[SyntheticBatch]:
    """Endless deterministic stream of planted-cluster batches."""
    if config.seq_ref_video < 1 or config.seq_ref_audio < 1:
        raise ConfigError("synthetic data needs at least one reference token per modality")
    d_in = config.d_in
    while True:
        identity = int(rng.integers(config.n_identities))
        timbre = int(rng.integers(config.n_timbres))
        text = int(rng.integers(config.n_text_templates))
        mu_v = cluster_mean("video", identity, d_in, config.sigma_between, config.seed)
        mu_a = cluster_mean("audio", timbre, d_in, config.sigma_between, config.seed)
        sw = config.sigma_within
        yield SyntheticBatch(
            z0_video=mu_v + sw * rng.normal(0.0, 1.0, (config.seq_video, d_in)),
            z0_audio=mu_a + sw * rng.normal(0.0, 1.0, (config.seq_audio, d_in)),
            video_refs=mu_v + sw * rng.normal(0.0, 1.0, (config.seq_ref_video, d_in)),
            audio_refs=mu_a + sw * rng.normal(0.0, 1.0, (config.seq_ref_audio, d_in)),
            identity_id=identity,
            timbre_id=timbre,
            text_id=text,
            z1_video=rng.normal(0.0, 1.0, (config.seq_video, d_in)),
            z1_audio=rng.normal(0.0, 1.0, (config.seq_audio, d_in)),
            t=sample_t(rng),
        )


def batch_to_inputs(batch: SyntheticBatch, provider: EmbeddingProvider) -> ModelInputs:
    """Corrupt the clean latents at the batch's t and attach conditioning."""
    return ModelInputs(
        video_latents=corrupt(batch.z0_video, batch.z1_video, batch.t).data,
        audio_latents=corrupt(batch.z0_audio, batch.z1_audio, batch.t).data,
        t=batch.t,
        text_id=batch.text_id,
        video_refs=batch.video_refs,
        audio_refs=batch.audio_refs,
        face_vec=provider.face(batch.identity_id),
        timbre_vec=provider.timbre(batch.timbre_id),
        mask_refs=False,
    )


# ---------------------------------------------------------------------------
# Training step
# ---------------------------------------------------------------------------


def train_step(model: TwinBackbone, batch: SyntheticBatch, weights: LossWeights,
               opt: AdamW, provider: EmbeddingProvider,
               negative_pass: str = "recorded",
               contrastive_clamp: float = 0.0) -> LossBreakdown:
    """One positive + (optionally) one negative forward, then an AdamW step.

    negative_pass: "recorded" runs the reference-blocked forward on the live
    model and detaches it with stop_grad; "no_grad" runs it off-tape. Both
    produce bit-identical gradients; the second skips dead tape nodes.
    """
    if negative_pass not in ("recorded", "no_grad"):
        raise ContractError(f"negative_pass must be 'recorded' or 'no_grad', got {negative_pass!r}")
    use_contrastive = weights.cl_identity != 0.0 or weights.cl_timbre != 0.0
    inputs = batch_to_inputs(batch, provider)

    try:
        with Tape():
            v_video, v_audio = model_forward(model, inputs)
            loss_v = fm_loss(v_video, batch.z0_video, batch.z1_video)
            loss_a = fm_loss(v_audio, batch.z0_audio, batch.z1_audio)
            cl_i = cl_a = None
            if use_contrastive:
                neg = build_negative_pass(inputs)
                if negative_pass == "recorded":
                    u_video, u_audio = model_forward(model, neg)
                    u_video, u_audio = stop_grad(u_video), stop_grad(u_audio)
                else:
                    with no_grad():
                        u_video, u_audio = model_forward(model, neg)
                cl_i = contrastive_loss(v_video, u_video, clamp=contrastive_clamp)
                cl_a = contrastive_loss(v_audio, u_audio, clamp=contrastive_clamp)
            total, breakdown = total_loss(loss_v, loss_a, cl_i, cl_a, weights)
            if not math.isfinite(breakdown.total):
                raise TrainingDiverged(
                    f"non-finite loss at optimizer step {opt.step_count + 1}: {breakdown}"
                )
            grads = backward(total)
    except NumericError as e:
        raise TrainingDiverged(
            f"non-finite values in forward at optimizer step {opt.step_count + 1}: {e}"
        ) from e

    by_name = {}
    tensor_to_name = {t: n for n, t in opt.params.items()}
    for leaf, g in grads.items():
        name = tensor_to_name.get(leaf)
        if name is not None:
            by_name[name] = g
    opt.step(by_name)
    return breakdown


def train_loop(model: TwinBackbone, config: RunConfig, steps: Optional[int] = None,
               log=None) -> list:
    """Run the configured number of steps on the synthetic stream; returns the
    per-step loss breakdowns (and writes log lines when `log` is given)."""
    from .objectives import format_loss_line

    steps = config.train_steps if steps is None else steps
    weights = LossWeights(
        fm_video=config.lambda_fm_video,
        fm_audio=config.lambda_fm_audio,
        cl_identity=config.lambda_cl_identity,
        cl_timbre=config.lambda_cl_timbre,
    )
    opt = AdamW(model.trainable_parameters(), AdamWConfig.from_run_config(config))
    provider = SyntheticEmbeddingProvider(config.seed)
    stream = synthetic_batches(config, _data_rng(config))
    history = []
    for step in range(1, steps + 1):
        breakdown = train_step(model, next(stream), weights, opt, provider,
                               contrastive_clamp=config.contrastive_clamp)
        history.append(breakdown)
        if log is not None and step % config.log_every == 0:
            log.write(format_loss_line(step, breakdown) + "\n")
    return history


def _data_rng(config: RunConfig) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([config.seed, 7]))


def init_rng(config: RunConfig) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([config.seed, 11]))


def build_model(config: RunConfig) -> TwinBackbone:
    """Fresh twin backbone from the config's seed."""
    return TwinBackbone.init(config, init_rng(config))


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def checkpoint_save(model: TwinBackbone, opt: Optional[AdamW], path,
                    extra: Optional[dict] = None) -> None:
    save_container(path, model.config, model.state_dict(),
                   optimizer=opt.state() if opt is not None else None,
                   extra=extra)


def checkpoint_load(path, expect_model_hash: Optional[str] = None):
    """Rebuild (model, optimizer-or-None, extra) from a container file."""
    data: CheckpointData = load_container(path, expect_model_hash=expect_model_hash)
    model = build_model(data.config)
    model.load_state_dict(data.tensors)
    opt = None
    if data.optimizer is not None:
        opt = AdamW(model.trainable_parameters(),
                    AdamWConfig.from_run_config(data.config))
        opt.load_state(data.optimizer)
    return model, opt, data.extra
