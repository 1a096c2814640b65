"""Model serialization.

A checkpoint is a single file: an 8-byte magic, a little-endian uint32
version and header length, a JSON header holding the model configuration
plus a manifest of (name, shape, offset) entries, and one flat blob of
little-endian float64 parameter values. Byte offsets index into the blob.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ArgumentError
from .network import Model, build_model
from .tensor import DTYPE

MAGIC = b"CIDCCKPT"
VERSION = 1


def model_config(model: Model) -> dict:
    """The constructor arguments that reproduce this model's shapes."""
    return {
        "in_channels": model.in_channels,
        "in_t": model.in_t,
        "in_size": model.in_size,
        "n_classes": model.n_classes,
        "fusion_mode": model.fusion_mode,
        "temporal_mode": model.temporal_mode,
        "dropout_rate": model.dropout_rate,
        "stage_channels": [s.channels for s in model.stages],
        "spatial_strides": [s.spatial_stride for s in model.stages],
        "temporal_strides": [s.temporal_stride for s in model.stages],
        "branch_channels": [b.channels for b in model.branches] or None,
        "unit_count": model.branches[0].unit_count if model.branches else 1,
    }


def build_from_config(config: dict) -> Model:
    """Rebuild a model skeleton with the same shapes; values are arbitrary."""
    cfg = dict(config)
    branch_channels = cfg.pop("branch_channels")
    return build_model(
        np.random.default_rng(0),
        in_channels=cfg.pop("in_channels"),
        in_t=cfg.pop("in_t"),
        in_size=cfg.pop("in_size"),
        stage_channels=tuple(cfg.pop("stage_channels")),
        spatial_strides=tuple(cfg.pop("spatial_strides")),
        temporal_strides=tuple(cfg.pop("temporal_strides")),
        branch_channels=tuple(branch_channels) if branch_channels else None,
        unit_count=cfg.pop("unit_count"),
        fusion_mode=cfg.pop("fusion_mode"),
        temporal_mode=cfg.pop("temporal_mode"),
        dropout_rate=cfg.pop("dropout_rate"),
        n_classes=cfg.pop("n_classes"),
    )


def save_checkpoint(path: str | Path, model: Model) -> None:
    params = model.parameters()
    manifest = []
    chunks = []
    offset = 0
    for name, value in params.items():
        raw = np.ascontiguousarray(value, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(value.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"config": model_config(model), "manifest": manifest},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)


def load_checkpoint(path: str | Path) -> Model:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise ArgumentError(f"{path} is not a checkpoint (bad magic)")
    version, header_len = struct.unpack_from("<II", blob, len(MAGIC))
    if version != VERSION:
        raise ArgumentError(f"unsupported checkpoint version {version}")
    start = len(MAGIC) + 8
    try:
        header = json.loads(blob[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArgumentError(f"{path} has a corrupt header: {exc}") from exc
    data = blob[start + header_len :]
    model = build_from_config(header["config"])
    params = model.parameters()
    seen = set()
    for entry in header["manifest"]:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        if name not in params:
            raise ArgumentError(f"checkpoint names unknown parameter {name!r}")
        target = params[name]
        if target.shape != shape:
            raise ArgumentError(
                f"parameter {name!r} has shape {shape} on disk, {target.shape} in model"
            )
        count = int(np.prod(shape)) if shape else 1
        if offset + count * 8 > len(data):
            raise ArgumentError(f"checkpoint is truncated at parameter {name!r}")
        values = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        np.copyto(target, values.reshape(shape).astype(DTYPE))
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise ArgumentError(f"checkpoint is missing parameters: {sorted(missing)}")
    return model
