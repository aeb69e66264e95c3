"""On-disk formats.

Tensor blob: four little-endian uint32 shape fields followed by the data as
little-endian float64 in row-major order. ConvParams: weight blob, bias blob,
then stride and padding as two little-endian uint32. Snapshots are ``.npz``
archives keyed by dotted parameter name plus the serialized config.
"""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_config, serialize_config
from .errors import ShapeMismatch
from .nn import ConvParams
from .tensor import Tensor

_SHAPE = struct.Struct("<4I")
_INTS = struct.Struct("<2I")


def tensor_to_bytes(t: Tensor) -> bytes:
    return _SHAPE.pack(*t.shape) + t.data.astype("<f8").tobytes(order="C")


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Decode one tensor starting at ``offset``; returns it and the next offset."""
    shape = _SHAPE.unpack_from(buf, offset)
    offset += _SHAPE.size
    count = int(np.prod(shape))
    end = offset + 8 * count
    if end > len(buf):
        raise ShapeMismatch(f"blob truncated: need {end} bytes, have {len(buf)}")
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
    return Tensor(data), end


def write_tensor(path: str | Path, t: Tensor) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def read_tensor(path: str | Path) -> Tensor:
    buf = Path(path).read_bytes()
    t, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise ShapeMismatch(f"{path}: {len(buf) - end} trailing bytes")
    return t


def tensor_to_csv(t: Tensor) -> str:
    """One row per (batch, channel) pair holding that plane flattened row-major."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    n, c, _, _ = t.shape
    for i in range(n):
        for j in range(c):
            writer.writerow(repr(float(v)) for v in t.data[i, j].ravel())
    return out.getvalue()


def conv_to_bytes(p: ConvParams) -> bytes:
    return tensor_to_bytes(p.weight) + tensor_to_bytes(p.bias) + _INTS.pack(p.stride, p.padding)


def conv_from_bytes(buf: bytes, offset: int = 0) -> tuple[ConvParams, int]:
    weight, offset = tensor_from_bytes(buf, offset)
    bias, offset = tensor_from_bytes(buf, offset)
    stride, padding = _INTS.unpack_from(buf, offset)
    weight.requires_grad = bias.requires_grad = True
    return ConvParams(weight, bias, stride, padding), offset + _INTS.size


def save_snapshot(path: str | Path, params, cfg: RunConfig) -> None:
    from .model import named_tensors

    arrays = {name: t.data for name, t in named_tensors(params)}
    arrays["__config__"] = np.frombuffer(serialize_config(cfg).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_snapshot(path: str | Path):
    """Rebuild (params, config) from a snapshot written by :func:`save_snapshot`."""
    from .model import init_model, named_tensors

    with np.load(path) as archive:
        cfg = parse_config(bytes(archive["__config__"]).decode())
        params = init_model(cfg)
        for name, t in named_tensors(params):
            if name not in archive:
                raise ShapeMismatch(f"snapshot {path} lacks parameter {name}")
            arr = archive[name]
            if arr.shape != t.shape:
                raise ShapeMismatch(f"{name}: snapshot shape {arr.shape} != model shape {t.shape}")
            t.data = np.array(arr, dtype=np.float64)
    return params, cfg
