"""Learnable temporal attention pooling over per-frame embeddings."""
from __future__ import annotations

import math

import numpy as np

from . import numerics as nx
from .adapters import ClipFeatureSequence
from .exceptions import DimensionError, DomainError
from .numerics import Tensor


class TemporalPooler:
    """Scores each frame with ``w2 tanh(w1 h_t)``, softmaxes over time, and averages.

    Neither layer has a bias. The result is invariant to frame order.
    """

    def __init__(self, width: int, seed: int = 0, w1=None, w2=None):
        if width % 2:
            raise DimensionError(f"pooler width must be even, got {width}")
        self.width = width
        rng = np.random.default_rng([int(seed), 2])
        half = width // 2
        if w1 is None:
            w1 = rng.normal(0.0, math.sqrt(1.0 / width), size=(half, width))
        if w2 is None:
            w2 = rng.normal(0.0, math.sqrt(2.0 / width), size=(1, half))
        self.w1 = Tensor(w1, requires_grad=True)
        self.w2 = Tensor(w2, requires_grad=True)
        if self.w1.shape != (half, width) or self.w2.shape != (1, half):
            raise DimensionError(f"pooler weights {self.w1.shape}, {self.w2.shape} do not fit width {width}")

    def attention(self, h: Tensor) -> Tensor:
        scores = nx.tanh(h @ self.w1.T) @ self.w2.T
        return nx.softmax(scores.reshape(scores.shape[:-1]), axis=-1)

    def __call__(self, h) -> tuple[Tensor, Tensor]:
        """Pool ``(..., T, d)`` features; returns ``(pooled (..., d), weights (..., T))``."""
        h = nx.as_tensor(h)
        if h.ndim < 2 or h.shape[-2] == 0:
            raise DomainError(f"need at least one frame, got features of shape {h.shape}")
        if h.shape[-1] != self.width:
            raise DimensionError(f"feature width {h.shape[-1]} != pooler width {self.width}")
        weights = self.attention(h)
        lead = weights.shape[:-1]
        n_frames = weights.shape[-1]
        pooled = weights.reshape(lead + (1, n_frames)) @ h
        return pooled.reshape(lead + (self.width,)), weights

    def named_tensors(self):
        yield "w1", self.w1
        yield "w2", self.w2

    def trainable_parameters(self):
        return list(self.named_tensors())


def pool(h, pooler: TemporalPooler) -> Tensor:
    if isinstance(h, ClipFeatureSequence):
        h = h.features
    return pooler(h)[0]
