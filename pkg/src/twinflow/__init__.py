"""Twin-backbone audio-video flow matching with reference LoRA conditioning.

A desk-scale, fully testable stack: a float64 autodiff tape, rectified-flow
training and guided Euler sampling, a symmetric audio/video transformer with
reference tokens and LoRA-adapted projections, contrastive conditioning
objectives, synthetic paired-latent data, and the manifest curation pipeline.
"""

from .config import RunConfig
from .flowmatch import GuidanceConfig, SamplerSchedule, corrupt, euler_step, fm_target, guided_velocity, sample_t
from .fusion import ModelInputs, TwinBackbone, fusion_block_forward, model_forward
from .kernels import BACKEND
from .objectives import LossBreakdown, LossWeights, build_negative_pass, contrastive_loss, fm_loss, total_loss
from .tensor import Tape, Tensor, backward, no_grad, stop_grad
from .trainer import AdamW, AdamWConfig, SyntheticBatch, build_model, synthetic_batches, train_step

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "AdamWConfig",
    "BACKEND",
    "GuidanceConfig",
    "LossBreakdown",
    "LossWeights",
    "ModelInputs",
    "RunConfig",
    "SamplerSchedule",
    "SyntheticBatch",
    "Tape",
    "Tensor",
    "TwinBackbone",
    "backward",
    "build_model",
    "build_negative_pass",
    "contrastive_loss",
    "corrupt",
    "euler_step",
    "fm_loss",
    "fm_target",
    "fusion_block_forward",
    "guided_velocity",
    "model_forward",
    "no_grad",
    "sample_t",
    "stop_grad",
    "synthetic_batches",
    "total_loss",
    "train_step",
]
