"""Manifest-level curation pipeline: quality filtering, format conformance
checks, and the reference/training window split.

Manifests are one JSON object per line. Scores (sync offset/confidence,
aesthetics) are precomputed upstream; this stage only applies thresholds and
reports the first failed predicate per rejected clip, in a fixed order:
speaker_count, sync_offset, sync_confidence, aesthetic_score, duration.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Optional

from .errors import ContractError

STANDARD_HEIGHT_PX = 480
STANDARD_FPS = 24.0
STANDARD_SAMPLE_RATE_HZ = 16000

REFERENCE_WINDOW_S = 4.0
TRAINING_WINDOW_S = 5.0
REFERENCE_FRAME_POLICY = "random-face-frame-cropped"

FIELD_TYPES = {
    "clip_id": str,
    "duration_s": float,
    "fps": float,
    "height_px": int,
    "sample_rate_hz": int,
    "sync_offset_frames": int,
    "sync_confidence": float,
    "aesthetic_score": float,
    "speaker_count": int,
}


@dataclass(frozen=True)
class ClipManifestRecord:
    clip_id: str
    duration_s: float
    fps: float
    height_px: int
    sample_rate_hz: int
    sync_offset_frames: int
    sync_confidence: float
    aesthetic_score: float
    speaker_count: int

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ContractError(f"{self.clip_id}: duration_s must be positive")
        if self.fps <= 0:
            raise ContractError(f"{self.clip_id}: fps must be positive")
        for name in ("sync_confidence", "aesthetic_score", "duration_s", "fps"):
            if not math.isfinite(getattr(self, name)):
                raise ContractError(f"{self.clip_id}: {name} must be finite")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def parse_record(line: str) -> ClipManifestRecord:
    """Parse one manifest line; raises ContractError on malformed input."""
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as e:
        raise ContractError(f"not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ContractError("manifest line must be a JSON object")
    missing = set(FIELD_TYPES) - set(raw)
    if missing:
        raise ContractError(f"missing field(s): {', '.join(sorted(missing))}")
    coerced = {}
    for name, typ in FIELD_TYPES.items():
        value = raw[name]
        if typ is float and isinstance(value, int):
            value = float(value)
        if typ is int and isinstance(value, bool):
            raise ContractError(f"field '{name}' must be {typ.__name__}")
        if not isinstance(value, typ):
            raise ContractError(f"field '{name}' must be {typ.__name__}, got {value!r}")
        coerced[name] = value
    return ClipManifestRecord(**coerced)


@dataclass(frozen=True)
class FilterThresholds:
    """Keep predicates; defaults are the production curation values."""

    max_abs_offset_frames: int = 3     # |offset| <= 3, inclusive
    min_confidence: float = 1.5        # strictly greater
    min_aesthetic: float = 0.3         # strictly greater
    min_duration_s: float = 10.0       # inclusive
    required_speakers: int = 1


# Evaluation order fixes which reason a multi-fault record reports.
_PREDICATES = (
    ("speaker_count", lambda r, th: r.speaker_count == th.required_speakers),
    ("sync_offset", lambda r, th: abs(r.sync_offset_frames) <= th.max_abs_offset_frames),
    ("sync_confidence", lambda r, th: r.sync_confidence > th.min_confidence),
    ("aesthetic_score", lambda r, th: r.aesthetic_score > th.min_aesthetic),
    ("duration", lambda r, th: r.duration_s >= th.min_duration_s),
)

REJECTION_REASONS = tuple(name for name, _ in _PREDICATES)


def rejection_reason(record: ClipManifestRecord,
                     thresholds: FilterThresholds = FilterThresholds()) -> Optional[str]:
    """First failed predicate name, or None when the record passes."""
    for name, pred in _PREDICATES:
        if not pred(record, thresholds):
            return name
    return None


def filter_manifest(records: Iterable[ClipManifestRecord],
                    thresholds: FilterThresholds = FilterThresholds()):
    """Partition records into (kept, [(record, reason), ...]), input order."""
    kept = []
    rejected = []
    for record in records:
        reason = rejection_reason(record, thresholds)
        if reason is None:
            kept.append(record)
        else:
            rejected.append((record, reason))
    return kept, rejected


@dataclass(frozen=True)
class ClipSplit:
    """Reference/training windows of one kept clip, in seconds."""

    clip_id: str
    reference_audio_window: tuple  # [0, 4)
    training_window: tuple         # [duration - 5, duration)
    reference_frame_policy: str = REFERENCE_FRAME_POLICY


def split_clip(record: ClipManifestRecord) -> ClipSplit:
    """First 4 s become the reference audio, last 5 s the training clip."""
    if record.duration_s < REFERENCE_WINDOW_S + TRAINING_WINDOW_S:
        raise ContractError(
            f"{record.clip_id}: duration {record.duration_s}s too short to split "
            f"(needs >= {REFERENCE_WINDOW_S + TRAINING_WINDOW_S}s; filter first)"
        )
    return ClipSplit(
        clip_id=record.clip_id,
        reference_audio_window=(0.0, REFERENCE_WINDOW_S),
        training_window=(record.duration_s - TRAINING_WINDOW_S, record.duration_s),
    )


def standardize_check(record: ClipManifestRecord) -> dict:
    """Flag departures from the 480p / 24 fps / 16 kHz target format."""
    flags = []
    if record.height_px != STANDARD_HEIGHT_PX:
        flags.append("height")
    if record.fps != STANDARD_FPS:
        flags.append("fps")
    if record.sample_rate_hz != STANDARD_SAMPLE_RATE_HZ:
        flags.append("sample_rate")
    return {"clip_id": record.clip_id, "conformant": not flags, "flags": flags}


def read_manifest_lines(lines: Iterable[str]):
    """Yield (line_number, record-or-None, error-or-None) per nonempty line."""
    for i, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            yield i, parse_record(line), None
        except ContractError as e:
            yield i, None, str(e)
