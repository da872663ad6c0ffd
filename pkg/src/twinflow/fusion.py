"""The symmetric twin backbone: parallel audio/video stacks of fusion blocks
coupled by paired cross-attention, with reference tokens riding alongside.

Per block and branch, in order: (1) joint self-attention over original +
reference tokens (reference LoRA, modulated pre-norm, global condition token
added to the original stream), (2) text cross-attention, (3) paired
audio<->video cross-attention computed from a common snapshot of both
streams, (4) MLP. Residuals wrap every sublayer; reference tokens skip the
two cross-attention sublayers and are modulated with the time embedding of
t=0 regardless of the batch's t.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attention import ProjectionWeights, RotaryTable, cross_attend
from .config import RunConfig
from .errors import ContractError, ShapeError
from .reflora import (
    FACE_DIM,
    TIMBRE_DIM,
    GlobalConditionEmbedding,
    LoraSet,
    joint_self_attention,
)
from .tensor import (
    Tensor,
    add,
    gelu,
    layer_norm,
    matmul,
    mul,
    no_grad,
    slice_rows,
)

LN_EPS = 1e-5
ROPE_MAX_POS = 4096
TIME_SCALE = 1000.0  # t in [0, 1] is stretched before the sinusoid bank


@dataclass
class BranchBlock:
    """One modality's share of a fusion block. Only `lora` is trainable."""

    self_attn: ProjectionWeights
    lora: LoraSet
    text_cross: ProjectionWeights
    pair_cross: ProjectionWeights
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor
    mod_attn: Tensor  # (d, 2d): time embedding -> [shift | scale] for the attn norm
    mod_mlp: Tensor   # (d, 2d): same for the MLP norm

    @classmethod
    def init(cls, d: int, rank: int, mlp_ratio: int, rng: np.random.Generator):
        h = mlp_ratio * d
        std_d = 1.0 / math.sqrt(d)
        return cls(
            self_attn=ProjectionWeights.init(d, rng),
            lora=LoraSet.init(d, rank, rng),
            text_cross=ProjectionWeights.init(d, rng),
            pair_cross=ProjectionWeights.init(d, rng),
            mlp_w1=Tensor(rng.normal(0.0, std_d, (d, h))),
            mlp_b1=Tensor(np.zeros(h)),
            mlp_w2=Tensor(rng.normal(0.0, 1.0 / math.sqrt(h), (h, d))),
            mlp_b2=Tensor(np.zeros(d)),
            mod_attn=Tensor(rng.normal(0.0, std_d, (d, 2 * d))),
            mod_mlp=Tensor(rng.normal(0.0, std_d, (d, 2 * d))),
        )


@dataclass
class FusionBlock:
    video: BranchBlock
    audio: BranchBlock


@dataclass
class ModelInputs:
    """One batch worth of conditioning and noised latents.

    Latents and reference tokens live in the d_in latent space; reference
    tokens are held at time step 0 inside the model no matter what t is.
    """

    video_latents: np.ndarray  # (seq_v, d_in)
    audio_latents: np.ndarray  # (seq_a, d_in)
    t: float
    text_id: int = 0
    video_refs: Optional[np.ndarray] = None  # (seq_rv, d_in)
    audio_refs: Optional[np.ndarray] = None  # (seq_ra, d_in)
    face_vec: Optional[np.ndarray] = None    # (512,)
    timbre_vec: Optional[np.ndarray] = None  # (256,)
    mask_refs: bool = False


def time_features(t: float, d: int) -> np.ndarray:
    """Sinusoidal features of the scaled time, half sines half cosines."""
    half = d // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = TIME_SCALE * t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


class TwinBackbone:
    """Twin audio/video stack. Trainable partition: the self-attention LoRA
    adapters and the global face/timbre projections; everything else frozen.
    """

    def __init__(self, config: RunConfig, blocks, in_proj, out_proj, time_w1,
                 time_w2, text_table, cond):
        self.config = config
        self.blocks: list[FusionBlock] = blocks
        self.in_proj: dict = in_proj    # {"video": Tensor(d_in, d), "audio": ...}
        self.out_proj: dict = out_proj  # {"video": Tensor(d, d_in), "audio": ...}
        self.time_w1 = time_w1
        self.time_w2 = time_w2
        self.text_table = text_table    # (n_templates, seq_text, d)
        self.cond: GlobalConditionEmbedding = cond
        self.rope = RotaryTable(config.width, ROPE_MAX_POS, config.rope_base)
        self._params = self._collect_params()
        self._time_cache: dict = {}  # t -> embedding; valid while time weights are frozen

    # -- construction -------------------------------------------------------

    @classmethod
    def init(cls, config: RunConfig, rng: np.random.Generator) -> "TwinBackbone":
        d, d_in = config.width, config.d_in
        std_in = 1.0 / math.sqrt(d_in)
        std_d = 1.0 / math.sqrt(d)
        blocks = [
            FusionBlock(
                video=BranchBlock.init(d, config.lora_rank, config.mlp_ratio, rng),
                audio=BranchBlock.init(d, config.lora_rank, config.mlp_ratio, rng),
            )
            for _ in range(config.depth)
        ]
        in_proj = {
            "video": Tensor(rng.normal(0.0, std_in, (d_in, d))),
            "audio": Tensor(rng.normal(0.0, std_in, (d_in, d))),
        }
        out_proj = {
            "video": Tensor(rng.normal(0.0, std_d, (d, d_in))),
            "audio": Tensor(rng.normal(0.0, std_d, (d, d_in))),
        }
        time_w1 = Tensor(rng.normal(0.0, std_d, (d, d)))
        time_w2 = Tensor(rng.normal(0.0, std_d, (d, d)))
        text_table = Tensor(rng.normal(0.0, 1.0, (config.n_text_templates, config.seq_text, d)))
        cond = GlobalConditionEmbedding.init(d, rng)
        return cls(config, blocks, in_proj, out_proj, time_w1, time_w2, text_table, cond)

    def _collect_params(self):
        params: list = []

        def put(name, tensor):
            params.append((name, tensor))

        put("time/w1", self.time_w1)
        put("time/w2", self.time_w2)
        put("text/table", self.text_table)
        for branch in ("video", "audio"):
            put(f"{branch}/in_proj", self.in_proj[branch])
            put(f"{branch}/out_proj", self.out_proj[branch])
        put("global/face_proj", self.cond.proj_face)
        put("global/timbre_proj", self.cond.proj_timbre)
        for i, block in enumerate(self.blocks):
            for branch in ("video", "audio"):
                bb: BranchBlock = getattr(block, branch)
                base = f"blocks/{i}/{branch}"
                for site, w in (("self_attn", bb.self_attn),
                                ("text_cross", bb.text_cross),
                                ("pair_cross", bb.pair_cross)):
                    put(f"{base}/{site}/w_q", w.w_q)
                    put(f"{base}/{site}/w_k", w.w_k)
                    put(f"{base}/{site}/w_v", w.w_v)
                    put(f"{base}/{site}/w_o", w.w_o)
                for aname, adapter in (("q", bb.lora.q), ("k", bb.lora.k),
                                       ("v", bb.lora.v), ("out", bb.lora.out)):
                    put(f"{base}/lora/{aname}/down", adapter.down)
                    put(f"{base}/lora/{aname}/up", adapter.up)
                put(f"{base}/mlp/w1", bb.mlp_w1)
                put(f"{base}/mlp/b1", bb.mlp_b1)
                put(f"{base}/mlp/w2", bb.mlp_w2)
                put(f"{base}/mlp/b2", bb.mlp_b2)
                put(f"{base}/mod/attn", bb.mod_attn)
                put(f"{base}/mod/mlp", bb.mod_mlp)
        return params

    # -- parameter access ----------------------------------------------------

    def named_parameters(self) -> dict:
        return dict(self._params)

    def trainable_parameters(self) -> dict:
        return {n: t for n, t in self._params if t.grad_required}

    def frozen_parameters(self) -> dict:
        return {n: t for n, t in self._params if not t.grad_required}

    def trainable_parameter_count(self) -> int:
        return sum(t.size for t in self.trainable_parameters().values())

    def frozen_hash(self) -> str:
        """SHA-256 over the frozen partition, in stable name order."""
        h = hashlib.sha256()
        for name, t in self._params:
            if not t.grad_required:
                h.update(name.encode())
                h.update(t.data.tobytes())
        return h.hexdigest()

    def state_dict(self) -> dict:
        return {name: t.data.copy() for name, t in self._params}

    def load_state_dict(self, state: dict) -> None:
        names = {name for name, _ in self._params}
        missing = names - set(state)
        extra = set(state) - names
        if missing or extra:
            raise ContractError(
                f"state dict mismatch: missing={sorted(missing)[:3]} extra={sorted(extra)[:3]}"
            )
        for name, t in self._params:
            arr = np.ascontiguousarray(np.asarray(state[name], dtype=np.float64))
            if arr.shape != t.data.shape:
                raise ShapeError(f"parameter '{name}': shape {arr.shape} != {t.data.shape}")
            t.data = arr
        self._time_cache.clear()

    def snapshot(self) -> "TwinBackbone":
        """Deep copy with identical weights (frozen-model comparisons)."""
        twin = TwinBackbone.init(self.config, np.random.default_rng(0))
        twin.load_state_dict(self.state_dict())
        return twin

    # -- forward -------------------------------------------------------------

    def time_embed(self, t: float) -> Tensor:
        """Deterministic (d,) embedding of the step time; frozen MLP over a
        sinusoid bank, computed off-tape and memoized per t."""
        if not 0.0 <= t <= 1.0:
            raise ContractError(f"time_embed: t={t} outside [0, 1]")
        cached = self._time_cache.get(t)
        if cached is None:
            with no_grad():
                phi = Tensor(time_features(t, self.config.width))
                cached = matmul(gelu(matmul(phi, self.time_w1)), self.time_w2).data
            if len(self._time_cache) >= 4096:
                self._time_cache.clear()
            self._time_cache[t] = cached
        return Tensor._wrap(cached)

    def text_tokens(self, text_id: int) -> Tensor:
        if not 0 <= text_id < self.config.n_text_templates:
            raise ContractError(
                f"text_id {text_id} outside [0, {self.config.n_text_templates})"
            )
        return Tensor(self.text_table.data[text_id])


def _split_modulation(mod_w: Tensor, e: Tensor, d: int):
    """(shift, scale) rows of the modulation map applied to a time embedding."""
    m = matmul(e, mod_w)  # (2d,)
    return slice_rows(m, 0, d), slice_rows(m, d, 2 * d)


def _modulated_norm(x: Tensor, mod_w: Tensor, e: Tensor, d: int) -> Tensor:
    shift, scale = _split_modulation(mod_w, e, d)
    return add(mul(layer_norm(x, LN_EPS), add(1.0, scale)), shift)


def _mlp(bb: BranchBlock, h: Tensor) -> Tensor:
    return add(matmul(gelu(add(matmul(h, bb.mlp_w1), bb.mlp_b1)), bb.mlp_w2), bb.mlp_b2)


def _branch_self_attention(bb: BranchBlock, x, r, e_t, e_0, cond_tok, mask_refs,
                           rope, pos, pos_r, d):
    h = _modulated_norm(x, bb.mod_attn, e_t, d)
    h_r = _modulated_norm(r, bb.mod_attn, e_0, d) if r is not None else None
    z, z_r = joint_self_attention(
        h, h_r, bb.self_attn, bb.lora, mask_refs=mask_refs,
        positions=pos, ref_positions=pos_r, rope_table=rope,
    )
    if cond_tok is not None:
        z = add(z, cond_tok)
    x = add(x, z)
    if z_r is not None:
        r = add(r, z_r)
    return x, r


def fusion_block_forward(block: FusionBlock, xv, xa, rv, ra, text, e_t, e_0,
                         face_tok, timbre_tok, mask_refs, rope, pos_v, pos_a,
                         pos_rv, pos_ra):
    """One fusion block over both branches; returns updated (xv, xa, rv, ra)."""
    d = xv.data.shape[1]

    # (1) joint self-attention with references and the global condition token
    xv, rv = _branch_self_attention(block.video, xv, rv, e_t, e_0, face_tok,
                                    mask_refs, rope, pos_v, pos_rv, d)
    xa, ra = _branch_self_attention(block.audio, xa, ra, e_t, e_0, timbre_tok,
                                    mask_refs, rope, pos_a, pos_ra, d)

    # (2) text cross-attention (original tokens only)
    xv = add(xv, matmul(cross_attend(layer_norm(xv, LN_EPS), text, block.video.text_cross),
                        block.video.text_cross.w_o))
    xa = add(xa, matmul(cross_attend(layer_norm(xa, LN_EPS), text, block.audio.text_cross),
                        block.audio.text_cross.w_o))

    # (3) paired cross-attention from a common snapshot, so the two branches
    # stay exactly symmetric
    snap_v, snap_a = xv, xa
    dv = matmul(cross_attend(layer_norm(snap_v, LN_EPS), layer_norm(snap_a, LN_EPS),
                             block.video.pair_cross), block.video.pair_cross.w_o)
    da = matmul(cross_attend(layer_norm(snap_a, LN_EPS), layer_norm(snap_v, LN_EPS),
                             block.audio.pair_cross), block.audio.pair_cross.w_o)
    xv = add(xv, dv)
    xa = add(xa, da)

    # (4) MLP; reference tokens rejoin here with the t=0 modulation
    xv = add(xv, _mlp(block.video, _modulated_norm(xv, block.video.mod_mlp, e_t, d)))
    xa = add(xa, _mlp(block.audio, _modulated_norm(xa, block.audio.mod_mlp, e_t, d)))
    if rv is not None:
        rv = add(rv, _mlp(block.video, _modulated_norm(rv, block.video.mod_mlp, e_0, d)))
    if ra is not None:
        ra = add(ra, _mlp(block.audio, _modulated_norm(ra, block.audio.mod_mlp, e_0, d)))
    return xv, xa, rv, ra


def _validate_inputs(model: TwinBackbone, inputs: ModelInputs) -> None:
    d_in = model.config.d_in
    for name, arr in (("video_latents", inputs.video_latents),
                      ("audio_latents", inputs.audio_latents)):
        a = np.asarray(arr)
        if a.ndim != 2 or a.shape[1] != d_in:
            raise ShapeError(f"{name} must be (seq, {d_in}), got {a.shape}")
    for name, arr in (("video_refs", inputs.video_refs),
                      ("audio_refs", inputs.audio_refs)):
        if arr is None:
            continue
        a = np.asarray(arr)
        if a.ndim != 2 or a.shape[1] != d_in:
            raise ShapeError(f"{name} must be (seq, {d_in}), got {a.shape}")
    if inputs.face_vec is not None and np.asarray(inputs.face_vec).shape != (FACE_DIM,):
        raise ShapeError(f"face_vec must be ({FACE_DIM},)")
    if inputs.timbre_vec is not None and np.asarray(inputs.timbre_vec).shape != (TIMBRE_DIM,):
        raise ShapeError(f"timbre_vec must be ({TIMBRE_DIM},)")
    if not 0.0 <= inputs.t <= 1.0:
        raise ContractError(f"t={inputs.t} outside [0, 1]")


def model_forward(model: TwinBackbone, inputs: ModelInputs,
                  mask_refs: Optional[bool] = None):
    """Predict (v_video, v_audio) with the same shapes as the input latents.

    mask_refs=None takes the flag from `inputs`. Reference-token outputs are
    dropped after the last block.
    """
    if mask_refs is None:
        mask_refs = inputs.mask_refs
    _validate_inputs(model, inputs)

    xv = matmul(Tensor(inputs.video_latents), model.in_proj["video"])
    xa = matmul(Tensor(inputs.audio_latents), model.in_proj["audio"])

    def ref_stream(arr, branch):
        if arr is None or np.asarray(arr).shape[0] == 0:
            return None
        return matmul(Tensor(arr), model.in_proj[branch])

    rv = ref_stream(inputs.video_refs, "video")
    ra = ref_stream(inputs.audio_refs, "audio")

    e_t = model.time_embed(inputs.t)
    e_0 = model.time_embed(0.0)
    text = model.text_tokens(inputs.text_id)
    face_tok = model.cond.face_token(inputs.face_vec) if inputs.face_vec is not None else None
    timbre_tok = (model.cond.timbre_token(inputs.timbre_vec)
                  if inputs.timbre_vec is not None else None)

    seq_v, seq_a = xv.data.shape[0], xa.data.shape[0]
    pos_v = np.arange(seq_v)
    pos_a = np.arange(seq_a)
    # Reference tokens sit in their own position range past the last original
    # token, so relative positions never alias.
    pos_rv = np.arange(seq_v, seq_v + rv.data.shape[0]) if rv is not None else None
    pos_ra = np.arange(seq_a, seq_a + ra.data.shape[0]) if ra is not None else None

    for block in model.blocks:
        xv, xa, rv, ra = fusion_block_forward(
            block, xv, xa, rv, ra, text, e_t, e_0, face_tok, timbre_tok,
            mask_refs, model.rope, pos_v, pos_a, pos_rv, pos_ra,
        )

    v_video = matmul(layer_norm(xv, LN_EPS), model.out_proj["video"])
    v_audio = matmul(layer_norm(xa, LN_EPS), model.out_proj["audio"])
    return v_video, v_audio
