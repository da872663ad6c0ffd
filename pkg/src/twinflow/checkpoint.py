"""Flat binary container for named float64 tensors.

Layout: magic, little-endian uint32 header length, canonical-JSON header,
then the concatenated row-major float64 payloads. The header embeds the full
run config plus a hash of its architecture fields; loading verifies both the
magic and that hash, so a corrupt or mismatched file fails loudly instead of
producing garbage weights. Sample outputs reuse the same container.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig
from .errors import CheckpointError

MAGIC = b"TWFC"
VERSION = 1


@dataclass
class CheckpointData:
    config: RunConfig
    tensors: dict            # name -> np.ndarray (float64)
    optimizer: Optional[dict]  # {"step_count": int, "m": {...}, "v": {...}} or None
    extra: dict


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def save_container(path, config: RunConfig, tensors: dict,
                   optimizer: Optional[dict] = None, extra: Optional[dict] = None) -> None:
    """Write named tensors (and optional optimizer state) under a config header."""
    entries = []
    payloads = []
    offset = 0

    def put(name: str, arr: np.ndarray):
        nonlocal offset
        arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.tobytes())
        offset += arr.size

    for name in tensors:
        put(name, tensors[name])
    opt_header = None
    if optimizer is not None:
        opt_header = {"step_count": int(optimizer["step_count"]),
                      "hyper": optimizer.get("hyper")}
        for kind in ("m", "v"):
            for name in optimizer[kind]:
                put(f"opt/{kind}/{name}", optimizer[kind][name])

    header = {
        "magic": MAGIC.decode(),
        "version": VERSION,
        "config": config.to_dict(),
        "model_hash": config.model_hash(),
        "tensors": entries,
        "optimizer": opt_header,
        "extra": extra or {},
    }
    blob = _canonical_json(header)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for p in payloads:
            f.write(p)


def load_container(path, expect_model_hash: Optional[str] = None) -> CheckpointData:
    """Read a container back; raises CheckpointError on any inconsistency."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}") from None
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container (bad magic)")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[8:8 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from None
    if header.get("magic") != MAGIC.decode() or header.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported container version")
    try:
        config = RunConfig.from_dict(header["config"])
    except Exception as e:
        raise CheckpointError(f"{path}: bad embedded config ({e})") from None
    if header.get("model_hash") != config.model_hash():
        raise CheckpointError(f"{path}: config hash mismatch (corrupt or edited header)")
    if expect_model_hash is not None and header["model_hash"] != expect_model_hash:
        raise CheckpointError(
            f"{path}: checkpoint architecture does not match the requested config"
        )

    body = raw[8 + hlen:]
    values = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"] * 8
        chunk = body[start:start + n * 8]
        if len(chunk) != n * 8:
            raise CheckpointError(f"{path}: truncated payload for '{entry['name']}'")
        values[entry["name"]] = np.frombuffer(chunk, dtype=np.float64).reshape(shape).copy()

    optimizer = None
    if header.get("optimizer") is not None:
        optimizer = {"step_count": header["optimizer"]["step_count"],
                     "hyper": header["optimizer"].get("hyper"),
                     "m": {}, "v": {}}
        for name in list(values):
            if name.startswith("opt/m/"):
                optimizer["m"][name[len("opt/m/"):]] = values.pop(name)
            elif name.startswith("opt/v/"):
                optimizer["v"][name[len("opt/v/"):]] = values.pop(name)
    return CheckpointData(config=config, tensors=values,
                          optimizer=optimizer, extra=header.get("extra", {}))
