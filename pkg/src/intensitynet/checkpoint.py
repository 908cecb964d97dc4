"""Binary checkpoint format for the hybrid predictor.

Layout (all integers little-endian):

====================  =======================================================
bytes                 content
====================  =======================================================
4                     magic ``SINT``
4                     u32 format version (currently 1)
8                     u64 length of the config block
...                   config block: canonical JSON, UTF-8
4                     u32 tensor count
per tensor            u16 name length, name UTF-8, u32 rank, u64 extents
                      (rank of them), u64 byte offset into the payload
...                   payload: raw little-endian float32, C order
8                     checksum: first 8 bytes of SHA-256 over everything
                      before it
====================  =======================================================

The config block stores the grid window, both sub-estimator configurations,
the hybrid alpha, and caller-supplied training metadata. Any single flipped
byte anywhere in the file fails the checksum on load.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import nn
from .estimators import FeltClassifier, HybridIntensityPredictor, IntensityRegressor
from .grid import GridSpec
from .util import atomic_write_bytes, canonical_json

MAGIC = b"SINT"
CHECKPOINT_VERSION = 1

_TENSOR_ORDER = (
    "classifier/dense/weights",
    "classifier/dense/bias",
    "regressor/conv/weights",
    "regressor/conv/bias",
    "regressor/dense/weights",
    "regressor/dense/bias",
)


class CheckpointError(ValueError):
    """Corrupt, truncated, or inconsistent checkpoint file."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint written by an unsupported format version."""


def _orders_json(orders) -> list:
    return [[source, int(power)] for source, power in orders]


def _orders_tuple(raw) -> tuple:
    return tuple((source, int(power)) for source, power in raw)


def _classifier_config(cls: FeltClassifier) -> dict:
    cfg = cls.feature_config_
    return {
        "k": cfg.k,
        "orders": _orders_json(cfg.classifier_orders),
        "magnitude_scale": cfg.magnitude_scale,
        "depth_scale": cfg.depth_scale,
        "epochs": cls.epochs,
        "batch_size": cls.batch_size,
        "learning_rate": cls.learning_rate,
        "seed": cls.seed,
        "felt_threshold": cls.felt_threshold,
    }


def _regressor_config(reg: IntensityRegressor) -> dict:
    cfg = reg.feature_config_
    return {
        "orders": _orders_json(cfg.regressor_orders),
        "magnitude_scale": cfg.magnitude_scale,
        "depth_scale": cfg.depth_scale,
        "conv_filters": reg.conv_filters,
        "conv_kernel": reg.conv_kernel,
        "epochs": reg.epochs,
        "batch_size": reg.batch_size,
        "learning_rate": reg.learning_rate,
        "seed": reg.seed,
    }


def save_checkpoint(
    path: Union[str, Path],
    predictor: HybridIntensityPredictor,
    metadata: Optional[dict] = None,
) -> None:
    """Serialize a fitted hybrid predictor (written atomically)."""
    for attr in ("classifier_", "regressor_"):
        if not hasattr(predictor, attr):
            raise ValueError("predictor must be fitted before saving")
    cls, reg = predictor.classifier_, predictor.regressor_
    if cls.grid_ != reg.grid_:
        raise ValueError("classifier and regressor grids disagree")

    config = {
        "alpha": float(predictor.alpha),
        "grid": {
            "lat_min_deg": cls.grid_.lat_min_deg,
            "lat_max_deg": cls.grid_.lat_max_deg,
            "lon_min_deg": cls.grid_.lon_min_deg,
            "lon_max_deg": cls.grid_.lon_max_deg,
            "n_cells": cls.grid_.n_cells,
        },
        "classifier": _classifier_config(cls),
        "regressor": _regressor_config(reg),
        "metadata": dict(metadata or {}),
    }
    tensors = {
        "classifier/dense/weights": cls.dense_.weights,
        "classifier/dense/bias": cls.dense_.bias,
        "regressor/conv/weights": reg.conv_.weights,
        "regressor/conv/bias": reg.conv_.bias,
        "regressor/dense/weights": reg.dense_.weights,
        "regressor/dense/bias": reg.dense_.bias,
    }

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    config_bytes = canonical_json(config).encode("utf-8")
    buf.write(struct.pack("<Q", len(config_bytes)))
    buf.write(config_bytes)
    buf.write(struct.pack("<I", len(_TENSOR_ORDER)))
    offset = 0
    for name in _TENSOR_ORDER:
        arr = tensors[name]
        name_bytes = name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_bytes)))
        buf.write(name_bytes)
        buf.write(struct.pack("<I", arr.ndim))
        for extent in arr.shape:
            buf.write(struct.pack("<Q", extent))
        buf.write(struct.pack("<Q", offset))
        offset += arr.size * 4
    for name in _TENSOR_ORDER:
        buf.write(np.ascontiguousarray(tensors[name], dtype="<f4").tobytes())
    body = buf.getvalue()
    checksum = hashlib.sha256(body).digest()[:8]
    atomic_write_bytes(path, body + checksum)


class _Reader:
    def __init__(self, data: bytes, name: str):
        self.data = data
        self.pos = 0
        self.name = name

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise CheckpointError(f"{self.name}: truncated checkpoint")
        out = self.data[self.pos : self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str) -> int:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]


def load_checkpoint(path: Union[str, Path]) -> HybridIntensityPredictor:
    """Load a checkpoint into a fitted :class:`HybridIntensityPredictor`.

    The caller-supplied metadata is exposed as ``predictor.metadata_``.
    """
    name = str(path)
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4 + 8 + 4 + 8:
        raise CheckpointError(f"{name}: file too short to be a checkpoint")
    body, stored = data[:-8], data[-8:]
    if hashlib.sha256(body).digest()[:8] != stored:
        raise CheckpointError(f"{name}: checksum mismatch (corrupt or truncated file)")

    r = _Reader(body, name)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{name}: bad magic bytes (not a checkpoint)")
    version = r.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{name}: format version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )
    config_len = r.unpack("<Q")
    try:
        config = json.loads(r.take(config_len).decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"{name}: bad config block ({exc})") from None

    n_tensors = r.unpack("<I")
    directory = []
    for _ in range(n_tensors):
        name_len = r.unpack("<H")
        tensor_name = r.take(name_len).decode("utf-8")
        rank = r.unpack("<I")
        shape = tuple(r.unpack("<Q") for _ in range(rank))
        tensor_offset = r.unpack("<Q")
        directory.append((tensor_name, shape, tensor_offset))
    payload = body[r.pos :]

    tensors = {}
    for tensor_name, shape, tensor_offset in directory:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = tensor_offset + count * 4
        if end > len(payload):
            raise CheckpointError(f"{name}: tensor {tensor_name!r} overruns the payload")
        flat = np.frombuffer(payload, dtype="<f4", count=count, offset=tensor_offset)
        tensors[tensor_name] = flat.astype(np.float32).reshape(shape)
    missing = [t for t in _TENSOR_ORDER if t not in tensors]
    if missing:
        raise CheckpointError(f"{name}: missing tensors {missing}")

    try:
        grid = GridSpec(**config["grid"])
        cls_cfg = dict(config["classifier"])
        reg_cfg = dict(config["regressor"])
        alpha = float(config["alpha"])
        metadata = config.get("metadata", {})
        cls_cfg["orders"] = _orders_tuple(cls_cfg["orders"])
        reg_cfg["orders"] = _orders_tuple(reg_cfg["orders"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{name}: invalid config block ({exc})") from None

    classifier = FeltClassifier(grid=grid, **cls_cfg)
    classifier.grid_, classifier.feature_config_ = classifier._resolve()
    classifier.dense_ = nn.LayerParams(
        "classifier/dense",
        tensors["classifier/dense/weights"],
        tensors["classifier/dense/bias"],
    )
    classifier.n_features_in_ = 4

    regressor = IntensityRegressor(grid=grid, **reg_cfg)
    regressor.grid_, regressor.feature_config_ = regressor._resolve()
    regressor.padding_ = (regressor.conv_kernel - 1) // 2
    regressor.conv_ = nn.LayerParams(
        "regressor/conv", tensors["regressor/conv/weights"], tensors["regressor/conv/bias"]
    )
    regressor.dense_ = nn.LayerParams(
        "regressor/dense", tensors["regressor/dense/weights"], tensors["regressor/dense/bias"]
    )
    regressor.n_features_in_ = 4

    n = grid.n_cells
    if classifier.dense_.weights.shape[0] != n * n or regressor.dense_.weights.shape[0] != n * n:
        raise CheckpointError(f"{name}: tensor shapes inconsistent with the grid config")

    predictor = HybridIntensityPredictor(regressor=regressor, classifier=classifier, alpha=alpha)
    predictor.classifier_ = classifier
    predictor.regressor_ = regressor
    predictor.metadata_ = metadata
    return predictor
