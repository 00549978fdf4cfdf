"""Frames and the LIMF frame-sequence file.

LIMF layout (little-endian): ``b"LIMF"``, u32 width, u32 height, u8 channels,
u32 frame count, f64 fps, then every frame's u8 samples back-to-back in
row-major (height, width, channels) order.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..exceptions import DomainError, FormatError

MAGIC = b"LIMF"
_HEADER = struct.Struct("<4sIIBId")
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class Frame:
    """One image; ``pixels`` has shape (height, width, channels) and dtype uint8."""

    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim == 2:
            pixels = pixels[:, :, None]
        if pixels.ndim != 3 or pixels.shape[2] not in (1, 3):
            raise DomainError(f"frame pixels must be (H, W, 1|3), got shape {pixels.shape}")
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise DomainError("frame extents must be positive")
        self.pixels = np.ascontiguousarray(pixels, dtype=np.uint8)

    @classmethod
    def from_buffer(cls, width: int, height: int, channels: int, buffer: bytes) -> Frame:
        if len(buffer) != width * height * channels:
            raise DomainError(f"pixel buffer of {len(buffer)} bytes != {width}x{height}x{channels}")
        return cls(np.frombuffer(buffer, dtype=np.uint8).reshape(height, width, channels))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def gray(self) -> np.ndarray:
        """Float (H, W) luminance."""
        if self.channels == 1:
            return self.pixels[:, :, 0].astype(np.float64)
        return self.pixels.astype(np.float64) @ _LUMA


@dataclass
class FrameSequence:
    """Frames of one source at a fixed rate; ``frames`` is (N, H, W, C) uint8."""

    frames: np.ndarray
    fps: float

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.uint8)
        if self.frames.ndim != 4 or self.frames.shape[3] not in (1, 3):
            raise DomainError(f"frame stack must be (N, H, W, 1|3), got shape {self.frames.shape}")
        if not self.fps > 0:
            raise DomainError(f"fps must be positive, got {self.fps}")

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __getitem__(self, i) -> Frame:
        return Frame(self.frames[i])

    @property
    def duration(self) -> float:
        return len(self) / self.fps

    @classmethod
    def from_frames(cls, frames, fps: float) -> FrameSequence:
        return cls(np.stack([f.pixels for f in frames]), fps)


def encode_limf(seq: FrameSequence) -> bytes:
    n, h, w, c = seq.frames.shape
    return _HEADER.pack(MAGIC, w, h, c, n, float(seq.fps)) + seq.frames.tobytes()


def decode_limf(payload: bytes) -> FrameSequence:
    return read_limf(io.BytesIO(payload))


def read_limf(source) -> FrameSequence:
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            return read_limf(fh)
    header = source.read(_HEADER.size)
    if len(header) != _HEADER.size:
        raise FormatError("truncated LIMF header")
    magic, w, h, c, n, fps = _HEADER.unpack(header)
    if magic != MAGIC:
        raise FormatError(f"bad frame-file magic {magic!r}")
    body = source.read(n * h * w * c)
    if len(body) != n * h * w * c:
        raise FormatError(f"LIMF body holds {len(body)} bytes, header promises {n * h * w * c}")
    return FrameSequence(np.frombuffer(body, dtype=np.uint8).reshape(n, h, w, c), fps)


def write_limf(path, seq: FrameSequence) -> None:
    Path(path).write_bytes(encode_limf(seq))
