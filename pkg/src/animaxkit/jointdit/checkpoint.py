"""Versioned binary checkpoint container.

Layout: an 8-byte little-endian header length, a UTF-8 JSON header, then the
raw tensor payload. The header records the format version, the denoiser and
latent-dimension configs, arbitrary extra metadata, and a tensor manifest
(name, shape, numpy dtype string, byte offset into the payload, byte count).
All tensor data is little-endian.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from ..errors import ValidationError
from .model import DenoiserConfig, JointDenoiser
from .tokens import LatentDims

FORMAT_NAME = "animaxkit-checkpoint"
FORMAT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    model: JointDenoiser,
    extra: dict | None = None,
) -> None:
    manifest = []
    payload = bytearray()
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = np.ascontiguousarray(arr).tobytes()
        manifest.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": arr.dtype.str,
                "offset": len(payload),
                "nbytes": len(raw),
            }
        )
        payload.extend(raw)
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": asdict(model.config),
        "dims": asdict(model.dims),
        "extra": extra or {},
        "tensors": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=False).encode("utf-8")
    with Path(path).open("wb") as f:
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        f.write(bytes(payload))


def load_checkpoint(path: str | Path) -> tuple[JointDenoiser, dict]:
    """Rebuild the model from a checkpoint; returns (model, extra metadata)."""
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise ValidationError(f"checkpoint {path} is truncated")
    (header_len,) = struct.unpack("<Q", blob[:8])
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"malformed checkpoint header in {path}: {exc}") from exc
    if header.get("format") != FORMAT_NAME:
        raise ValidationError(f"{path} is not a {FORMAT_NAME} file")
    if header.get("version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {header.get('version')}")

    config = DenoiserConfig(**header["config"])
    dims = LatentDims(**header["dims"])
    payload = blob[8 + header_len :]
    state = {}
    for entry in header["tensors"]:
        start = entry["offset"]
        raw = payload[start : start + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
    model = JointDenoiser(config, dims)
    model.load_state_dict(state)
    model.eval()
    return model, header.get("extra", {})
