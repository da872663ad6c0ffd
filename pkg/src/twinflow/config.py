"""Flat JSON run configuration shared by training, sampling and the CLI.

Flags override file values; the fully resolved config is echoed to the run
log and embedded in checkpoints, whose header carries a hash of the
architecture-defining fields so weights never load into the wrong shape.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

# Fields that determine parameter shapes and wiring; the checkpoint hash
# covers exactly these.
ARCH_FIELDS = (
    "depth",
    "width",
    "d_in",
    "seq_text",
    "n_text_templates",
    "lora_rank",
    "mlp_ratio",
    "rope_base",
)


@dataclass
class RunConfig:
    # architecture
    depth: int = 2
    width: int = 64
    d_in: int = 16
    seq_video: int = 16
    seq_audio: int = 16
    seq_ref_video: int = 4
    seq_ref_audio: int = 4
    seq_text: int = 4
    n_text_templates: int = 8
    lora_rank: int = 4
    mlp_ratio: int = 4
    rope_base: float = 10000.0
    # objectives
    lambda_fm_video: float = 1.0
    lambda_fm_audio: float = 1.0
    lambda_cl_identity: float = 0.1
    lambda_cl_timbre: float = 0.1
    contrastive_clamp: float = 0.0  # 0 disables the clamp
    # optimizer / training
    train_steps: int = 2000
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    log_every: int = 1
    # synthetic data
    n_identities: int = 2
    n_timbres: int = 2
    sigma_within: float = 0.1
    sigma_between: float = 1.0
    # sampling
    guidance_video: float = 4.0
    guidance_audio: float = 3.0
    sample_steps: int = 50
    # reproducibility
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("depth", "width", "d_in", "seq_video", "seq_audio", "seq_text",
                     "n_text_templates", "lora_rank", "mlp_ratio", "train_steps",
                     "sample_steps", "n_identities", "n_timbres", "log_every"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"config field '{name}' must be a positive integer, got {v!r}")
        for name in ("seq_ref_video", "seq_ref_audio"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ConfigError(f"config field '{name}' must be a nonnegative integer, got {v!r}")
        if self.width % 2 != 0:
            raise ConfigError("config field 'width' must be even (rotary channel pairs)")
        for name in ("lr", "rope_base", "sigma_within", "sigma_between"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"config field '{name}' must be positive")
        for name in ("guidance_video", "guidance_audio", "contrastive_clamp",
                     "weight_decay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"config field '{name}' must be >= 0")
        if not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise ConfigError("config fields 'beta1'/'beta2' must lie in (0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return cls.from_dict(raw)

    def with_overrides(self, **overrides) -> "RunConfig":
        d = self.to_dict()
        for k, v in overrides.items():
            if v is None:
                continue
            if k not in d:
                raise ConfigError(f"unknown config field '{k}'")
            d[k] = v
        return RunConfig.from_dict(d)

    def model_hash(self) -> str:
        """Hash of the architecture-defining fields (checkpoint compatibility)."""
        arch = {k: getattr(self, k) for k in ARCH_FIELDS}
        blob = json.dumps(arch, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()
