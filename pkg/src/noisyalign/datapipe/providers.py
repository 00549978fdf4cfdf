"""Shot-boundary and caption provider interfaces with deterministic local stand-ins.

``HistogramShotDetector`` is a simple grayscale-histogram cut detector, not a
learned boundary model. ``MockCaptioner`` derives text from a digest of its
inputs. Real network clients plug in through the same two methods and the
JSON wire helpers below.
"""
from __future__ import annotations

import base64
import hashlib
import logging
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from ..exceptions import FormatError, ProviderError
from .frames import FrameSequence, decode_limf, encode_limf
from .stages import ShotSpan

log = logging.getLogger(__name__)


@runtime_checkable
class ShotBoundaryProvider(Protocol):
    def boundaries(self, frames: FrameSequence) -> list[float]:
        """Cut timestamps in seconds, strictly inside (0, duration)."""


@runtime_checkable
class CaptionProvider(Protocol):
    def caption(self, frames: FrameSequence, prompt: str) -> str: ...


def gray_histogram(pixels: np.ndarray, bins: int = 64) -> np.ndarray:
    """Normalized histogram of an (H, W, C) frame's luminance."""
    if pixels.shape[-1] == 3:
        gray = pixels.astype(np.float64) @ np.array([0.299, 0.587, 0.114])
    else:
        gray = pixels[..., 0].astype(np.float64)
    counts, _ = np.histogram(gray, bins=bins, range=(0.0, 256.0))
    return counts / gray.size


class HistogramShotDetector:
    """Cut between consecutive frames whose histogram L1 distance exceeds ``threshold``."""

    def __init__(self, threshold: float = 0.5, bins: int = 64):
        self.threshold = threshold
        self.bins = bins

    def boundaries(self, frames: FrameSequence) -> list[float]:
        cuts = []
        previous = None
        for i in range(len(frames)):
            hist = gray_histogram(frames.frames[i], self.bins)
            if previous is not None and np.abs(hist - previous).sum() > self.threshold:
                cuts.append(i / frames.fps)
            previous = hist
        return cuts


def shots_from_cuts(cuts: Sequence[float], duration: float) -> list[ShotSpan]:
    edges = [0.0] + sorted(c for c in cuts if 0.0 < c < duration) + [duration]
    return [ShotSpan(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


_FIELDS = ("circular", "rectangular")
_INSTRUMENTS = ("grasper", "hook", "clipper", "scissors", "irrigator", "bipolar forceps")
_ANATOMY = ("gallbladder", "liver edge", "cystic duct", "peritoneum", "omentum", "bowel loop")
_ACTIONS = ("retracts", "dissects", "coagulates", "clips", "irrigates", "inspects")
_LIGHT = ("bright", "dim", "even", "glare-affected")


class MockCaptioner:
    """Deterministic caption derived from a digest of the prompt and the frame bytes."""

    def caption(self, frames: FrameSequence, prompt: str) -> str:
        digest = hashlib.sha256(prompt.encode("utf-8") + frames.frames.tobytes()).digest()
        pick = lambda options, byte: options[digest[byte] % len(options)]  # noqa: E731
        return (
            f"A {pick(_FIELDS, 0)} field of view shows a {pick(_INSTRUMENTS, 1)} that "
            f"{pick(_ACTIONS, 2)} the {pick(_ANATOMY, 3)} while a {pick(_INSTRUMENTS, 4)} holds the "
            f"{pick(_ANATOMY, 5)}; the camera is steady and the lighting is {pick(_LIGHT, 6)}."
        )


class RetryingCaptioner:
    """Retries a provider on :class:`ProviderError` up to ``retries`` extra times."""

    def __init__(self, provider: CaptionProvider, retries: int = 2):
        self.provider = provider
        self.retries = retries

    def caption(self, frames: FrameSequence, prompt: str) -> str:
        for attempt in range(self.retries + 1):
            try:
                return self.provider.caption(frames, prompt)
            except ProviderError as exc:
                log.warning("caption attempt %d failed: %s", attempt + 1, exc)
                last = exc
        raise last


def caption_request(prompt: str, frames: FrameSequence) -> dict:
    """JSON-ready request body: the prompt plus base64-encoded LIMF bytes of the clip."""
    return {"prompt": prompt, "frames": base64.b64encode(encode_limf(frames)).decode("ascii")}


def parse_caption_request(payload: dict) -> tuple[str, FrameSequence]:
    try:
        return payload["prompt"], decode_limf(base64.b64decode(payload["frames"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed caption request: {exc}") from exc


def parse_caption_response(payload: dict) -> str:
    caption = payload.get("caption") if isinstance(payload, dict) else None
    if not isinstance(caption, str) or not caption.strip():
        raise ProviderError(f"caption response lacks a non-empty 'caption' string: {payload!r}")
    return caption
