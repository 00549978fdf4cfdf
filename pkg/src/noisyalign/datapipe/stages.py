"""Deterministic curation stages: resize/crop, windowing, blur scoring, prompting."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ..exceptions import DomainError, PruningContractError, StandardizationError
from .frames import Frame

TARGET_WIDTH, TARGET_HEIGHT = 832, 480
_TOL = 1e-9

PROMPT_ASPECTS = (
    "shape of the visible field (circular or rectangular) and whether the operation is robot-assisted",
    "which instruments appear",
    "which organs and tissues are visible or handled",
    "what is done, in order",
    "camera viewpoint and illumination",
)


@dataclass(frozen=True)
class ShotSpan:
    start_s: float
    end_s: float

    @property
    def length(self) -> float:
        return self.end_s - self.start_s


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def standardize_geometry(width: int, height: int, target_w: int = TARGET_WIDTH,
                         target_h: int = TARGET_HEIGHT) -> tuple[int, int, int, int]:
    """Return ``(scaled_w, scaled_h, crop_x, crop_y)`` for a shortest-side resize then center crop."""
    if width < 1 or height < 1:
        raise StandardizationError(f"frame extents must be positive, got {width}x{height}")
    if height <= width:
        scaled_h, scaled_w = target_h, _round_half_up(width * target_h / height)
    else:
        scaled_w, scaled_h = target_w, _round_half_up(height * target_w / width)
    if scaled_w < target_w or scaled_h < target_h:
        raise StandardizationError(
            f"{width}x{height} scales to {scaled_w}x{scaled_h}, too small to crop {target_w}x{target_h}"
        )
    return scaled_w, scaled_h, (scaled_w - target_w) // 2, (scaled_h - target_h) // 2


def bilinear_resize(pixels: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Half-pixel-centred bilinear resampling of an (H, W, C) uint8 array."""
    h, w = pixels.shape[:2]
    if (new_w, new_h) == (w, h):
        return pixels.copy()

    def axis(n_out, n_in):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis(new_h, h)
    x0, x1, fx = axis(new_w, w)
    img = pixels.astype(np.float64)
    top = img[y0][:, x0] * (1 - fx)[None, :, None] + img[y0][:, x1] * fx[None, :, None]
    bottom = img[y1][:, x0] * (1 - fx)[None, :, None] + img[y1][:, x1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bottom * fy[:, None, None]
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def standardize_frame(frame: Frame, target_w: int = TARGET_WIDTH, target_h: int = TARGET_HEIGHT) -> Frame:
    scaled_w, scaled_h, x0, y0 = standardize_geometry(frame.width, frame.height, target_w, target_h)
    resized = bilinear_resize(frame.pixels, scaled_w, scaled_h)
    return Frame(resized[y0 : y0 + target_h, x0 : x0 + target_w])


class FrameStandardizer(TransformerMixin, BaseEstimator):
    """Stateless transformer applying :func:`standardize_frame` to a stack of frames."""

    def __init__(self, target_width: int = TARGET_WIDTH, target_height: int = TARGET_HEIGHT):
        self.target_width = target_width
        self.target_height = target_height

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        return np.stack([
            standardize_frame(Frame(p), self.target_width, self.target_height).pixels for p in X
        ])


def window_clips(shot: ShotSpan, window: float = 5.0, stride: float = 2.0) -> list[tuple[float, float]]:
    """Fixed-length windows from the shot start; a remainder shorter than a window is dropped."""
    if window <= 0 or stride <= 0:
        raise DomainError("window and stride must be positive")
    if shot.length < window - _TOL:
        raise PruningContractError(f"shot of {shot.length:.3f}s is shorter than the {window}s window")
    out = []
    k = 0
    while True:
        start = shot.start_s + k * stride
        if start + window > shot.end_s + _TOL:
            return out
        out.append((start, start + window))
        k += 1


def laplacian_sharpness(image) -> float:
    """Population variance of the 4-neighbour Laplacian over the valid interior."""
    if isinstance(image, Frame):
        if image.channels != 1:
            raise DomainError("laplacian_sharpness expects a single-channel frame; convert with Frame.gray()")
        image = image.pixels[:, :, 0]
    p = np.asarray(image, dtype=np.float64)
    if p.ndim != 2:
        raise DomainError(f"expected a 2-D grayscale image, got shape {p.shape}")
    if p.shape[0] < 3 or p.shape[1] < 3:
        raise DomainError(f"image {p.shape[1]}x{p.shape[0]} is smaller than 3x3")
    response = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * p[1:-1, 1:-1]
    return float(np.var(response))


def sample_indices(n_frames: int, n_samples: int = 3) -> list[int]:
    """Evenly spaced frame indices including the first and last frame."""
    if n_frames < 1:
        raise DomainError("cannot sample from an empty clip")
    if n_samples == 1:
        return [0]
    return sorted({int(i) for i in np.floor(np.linspace(0, n_frames - 1, n_samples))})


def clip_sharpness(frames: Sequence[Frame], n_samples: int = 3) -> float:
    """Mean Laplacian sharpness of ``n_samples`` evenly spaced frames."""
    idx = sample_indices(len(frames), n_samples)
    return float(np.mean([laplacian_sharpness(frames[i].gray()) for i in idx]))


def prune_blurred(records, threshold: float) -> list:
    """Keep records whose ``sharpness`` is at least ``threshold``, in input order."""
    return [r for r in records if r.sharpness >= threshold]


def build_caption_prompt(metadata: Mapping[str, str]) -> str:
    title = str(metadata.get("title", "")).strip()
    if not title:
        raise DomainError("caption prompt needs a non-empty title")
    surgery_type = str(metadata.get("surgery_type", "unspecified")).strip() or "unspecified"
    aspects = "\n".join(f"({i}) {text};" for i, text in enumerate(PROMPT_ASPECTS, start=1))
    return (
        "Act as an expert annotator of surgical footage and describe the attached clip.\n"
        f"Video title: {title}\n"
        f"Surgery type: {surgery_type}\n"
        "Cover these points:\n"
        f"{aspects}\n"
        "Reply with one short paragraph of plain prose."
    )
