"""LIMT binary tensor container and the named-parameter checkpoint built on it.

Layout of one record: ``b"LIMT"``, u32 rank, rank x u32 extents, then the
float64 values in row-major order. Everything is little-endian.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from ..exceptions import FormatError

MAGIC = b"LIMT"


def encode_tensor(array) -> bytes:
    array = np.asarray(array, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
    header = MAGIC + struct.pack("<I", array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape)
    return header + array.tobytes(order="C")


def read_tensor(stream: BinaryIO) -> np.ndarray:
    magic = stream.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    (rank,) = struct.unpack("<I", _read_exact(stream, 4))
    shape = struct.unpack(f"<{rank}I", _read_exact(stream, 4 * rank))
    count = int(np.prod(shape)) if rank else 1
    values = np.frombuffer(_read_exact(stream, 8 * count), dtype="<f8")
    return values.reshape(shape).astype(np.float64)


def decode_tensor(payload: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(payload))


def save_tensor(path, array) -> None:
    Path(path).write_bytes(encode_tensor(array))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def save_checkpoint(path, tensors: Mapping[str, np.ndarray]) -> None:
    """Write ``path`` (concatenated LIMT records) and ``path + '.json'`` (name -> offset index)."""
    path = Path(path)
    index = {}
    offset = 0
    with open(path, "wb") as fh:
        for name in tensors:
            blob = encode_tensor(tensors[name])
            index[name] = {"offset": offset, "shape": list(np.shape(tensors[name]))}
            fh.write(blob)
            offset += len(blob)
    Path(str(path) + ".json").write_text(json.dumps({"format": "LIMT", "tensors": index}, indent=1))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        index = json.loads(Path(str(path) + ".json").read_text())["tensors"]
    except (KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed checkpoint index for {path}") from exc
    out = {}
    with open(path, "rb") as fh:
        for name, entry in index.items():
            fh.seek(entry["offset"])
            out[name] = read_tensor(fh)
            if list(out[name].shape) != entry["shape"]:
                raise FormatError(f"{name}: index shape {entry['shape']} != stored {out[name].shape}")
    return out


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise FormatError("truncated tensor record")
    return data
