"""Checkpoint file format.

Layout: magic bytes "LSKP", little-endian uint32 format version,
little-endian uint64 header length, a UTF-8 JSON header holding the
model config, a named-array manifest and any extra configs, then the
raw little-endian float32 arrays in manifest order. Loading an intact
file reproduces the saved parameters bitwise.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from selfspec.model import DecoderModel, ModelConfig

MAGIC = b"LSKP"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    def __init__(self, message: str, offset: int | None = None) -> None:
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def save_checkpoint(model: DecoderModel, path: str | Path, extras: dict | None = None) -> None:
    """Write the model's parameters and configs to ``path``."""
    names = []
    arrays = []
    for name, param in model.named_parameters():
        names.append(name)
        arrays.append(param.detach().to(torch.float32).numpy().astype("<f4"))
    header = {
        "model_config": model.config.to_dict(),
        "manifest": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)],
        "extras": extras or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for a in arrays:
            f.write(a.tobytes())


def load_checkpoint(path: str | Path) -> tuple[DecoderModel, dict]:
    """Read a checkpoint; returns the rebuilt model and the extras dict."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise CheckpointError("bad magic bytes, not a checkpoint file", offset=0)
    if len(data) < 16:
        raise CheckpointError("truncated header", offset=len(data))
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported format version {version} (reader supports {FORMAT_VERSION})", offset=4
        )
    (header_len,) = struct.unpack_from("<Q", data, 8)
    header_end = 16 + header_len
    if len(data) < header_end:
        raise CheckpointError("truncated header", offset=len(data))
    try:
        header = json.loads(data[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}", offset=16) from exc

    config = ModelConfig.from_dict(header["model_config"])
    model = DecoderModel(config, seed=0)
    params = dict(model.named_parameters())
    offset = header_end
    with torch.no_grad():
        for entry in header["manifest"]:
            name, shape = entry["name"], tuple(entry["shape"])
            if name not in params:
                raise CheckpointError(f"unknown array {name!r} in manifest", offset=offset)
            n_bytes = int(np.prod(shape)) * 4
            if offset + n_bytes > len(data):
                raise CheckpointError(f"truncated array {name!r}", offset=offset)
            array = np.frombuffer(data[offset:offset + n_bytes], dtype="<f4").reshape(shape)
            if tuple(params[name].shape) != shape:
                raise CheckpointError(f"shape mismatch for {name!r}", offset=offset)
            params[name].copy_(torch.from_numpy(array.copy()))
            offset += n_bytes
    if offset != len(data):
        raise CheckpointError("trailing bytes after last array", offset=offset)
    return model, header.get("extras", {})
