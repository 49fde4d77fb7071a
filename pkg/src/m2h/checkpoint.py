"""Binary checkpoint format.

Layout (all integers little-endian)::

    8 bytes   magic b"M2HCKPT\\0"
    u32       format version
    u32       header length n
    n bytes   UTF-8 JSON: {"model": ModelConfig dict, "run": flat run config text,
                           "dwa": DwaState dict, "step": int,
                           "tensors": [{"name", "shape"}, ...]}
    ...       float32 little-endian payloads, one per tensor, in header order
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ModelConfig, model_config_from_dict, model_config_to_dict
from .errors import ConfigError, DatasetIOError, M2HError
from .losses import DwaState

MAGIC = b"M2HCKPT\0"
VERSION = 1


class CheckpointError(M2HError, ValueError):
    """Checkpoint file is malformed or incompatible with the requested model."""


@dataclass
class Checkpoint:
    model_config: ModelConfig
    state: dict[str, np.ndarray]
    dwa: Optional[DwaState] = None
    step: int = 0
    run_config: str = ""


def save_checkpoint(path: str | Path, model, dwa: Optional[DwaState] = None, step: int = 0,
                    run_config: str = "") -> Path:
    path = Path(path)
    state = model.state_dict()
    names = list(state)
    header = {
        "model": model_config_to_dict(model.cfg),
        "run": run_config,
        "dwa": dwa.to_dict() if dwa is not None else None,
        "step": int(step),
        "tensors": [{"name": n, "shape": list(state[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
    parts.extend(np.ascontiguousarray(state[n], dtype="<f4").tobytes() for n in names)
    try:
        path.write_bytes(b"".join(parts))
    except OSError as exc:
        raise DatasetIOError(f"cannot write checkpoint {path}: {exc.strerror or exc}") from exc
    return path


def read_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DatasetIOError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from exc
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    version, n = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(data[16 : 16 + n].decode())
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    offset = 16 + n
    state = {}
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        size = int(np.prod(shape)) * 4
        if offset + size > len(data):
            raise CheckpointError(f"{path}: truncated at tensor {t['name']}")
        state[t["name"]] = np.frombuffer(data[offset : offset + size], dtype="<f4").reshape(shape).astype(np.float32)
        offset += size
    try:
        cfg = model_config_from_dict(header["model"])
    except (TypeError, ConfigError) as exc:
        raise CheckpointError(f"{path}: invalid model config: {exc}") from exc
    dwa = DwaState.from_dict(header["dwa"]) if header.get("dwa") else None
    return Checkpoint(cfg, state, dwa, int(header["step"]), header.get("run", ""))


def load_model(path: str | Path, expect: Optional[ModelConfig] = None):
    """Build a model from a checkpoint; ``expect`` must equal the stored config if given."""
    from .model import M2H

    ckpt = read_checkpoint(path)
    if expect is not None and model_config_to_dict(expect) != model_config_to_dict(ckpt.model_config):
        raise CheckpointError(f"{path}: checkpoint model config differs from the requested one")
    model = M2H(ckpt.model_config)
    try:
        model.load_state_dict(ckpt.state)
    except ConfigError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return model, ckpt
