"""Frozen toy encoders with low-rank adapters on their attention projections.

The vision encoder treats one frame as a short token sequence (one token per
pixel row plus a summary token) and returns the summary token, so frames are
encoded independently. The text encoder embeds hashed word ids. Both run
pre-norm single-head attention blocks; only the LoRA factors are trainable.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import numerics as nx
from .exceptions import DimensionError, DomainError, VocabularyError
from .numerics import Tensor
from .tokens import CLS_ID, PAD_ID, TokenSequence

LORA_INIT_STD = 0.02
_MASKED = -1e9


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream])


def _gaussian(rng: np.random.Generator, shape, var: float) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(var), size=shape)


class FrozenLinear:
    """``y = x W^T + bias`` with both terms excluded from training."""

    def __init__(self, weight, bias=None):
        self.weight = Tensor(weight)
        d_out = self.weight.shape[0]
        self.bias = Tensor(np.zeros(d_out) if bias is None else bias)

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        x = nx.as_tensor(x)
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"input width {x.shape[-1]} != layer input width {self.d_in}")
        return x @ self.weight.T + self.bias

    def named_tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias

    def trainable(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        return iter(())


class LoraLinear(FrozenLinear):
    """Frozen linear map plus the trainable low-rank update ``(alpha / r) * b @ a``."""

    def __init__(self, weight, a, b, alpha: float, bias=None):
        super().__init__(weight, bias)
        self.a = Tensor(a, requires_grad=True)
        self.b = Tensor(b, requires_grad=True)
        if self.a.shape != (self.rank, self.d_in) or self.b.shape != (self.d_out, self.rank):
            raise DimensionError(
                f"LoRA factors a{self.a.shape}, b{self.b.shape} do not fit weight {self.weight.shape}"
            )
        if alpha <= 0:
            raise DomainError("alpha must be positive")
        self.alpha = float(alpha)

    @classmethod
    def initialize(cls, weight, rank: int, alpha: float, rng: np.random.Generator, bias=None):
        d_out, d_in = np.shape(weight)
        a = rng.normal(0.0, LORA_INIT_STD, size=(rank, d_in))
        return cls(weight, a, np.zeros((d_out, rank)), alpha, bias)

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def __call__(self, x: Tensor) -> Tensor:
        frozen = super().__call__(x)
        return frozen + ((x @ self.a.T) @ self.b.T) * self.scale

    def merge(self) -> np.ndarray:
        return self.weight.data + self.scale * (self.b.data @ self.a.data)

    def named_tensors(self, prefix: str):
        yield from super().named_tensors(prefix)
        yield f"{prefix}.lora_a", self.a
        yield f"{prefix}.lora_b", self.b

    def trainable(self, prefix: str):
        yield f"{prefix}.lora_a", self.a
        yield f"{prefix}.lora_b", self.b


def lora_forward(x, layer: LoraLinear) -> Tensor:
    return layer(nx.as_tensor(x))


def lora_merge(layer: LoraLinear) -> np.ndarray:
    """Dense weight equivalent to the adapted layer (bias unchanged)."""
    return layer.merge()


class AttentionBlock:
    """Pre-norm single-head self-attention followed by a frozen GELU feed-forward."""

    def __init__(self, width: int, lora_targets: Sequence[str], rank: int, alpha: float,
                 frozen_rng: np.random.Generator, lora_rng: np.random.Generator):
        self.width = width
        projections = {}
        for name in ("q", "k", "v"):
            weight = _gaussian(frozen_rng, (width, width), 1.0 / width)
            bias = _gaussian(frozen_rng, (width,), 0.01)
            if name in lora_targets:
                projections[name] = LoraLinear.initialize(weight, rank, alpha, lora_rng, bias)
            else:
                projections[name] = FrozenLinear(weight, bias)
        self.q, self.k, self.v = projections["q"], projections["k"], projections["v"]
        self.o = FrozenLinear(_gaussian(frozen_rng, (width, width), 1.0 / width))
        self.ff1 = FrozenLinear(_gaussian(frozen_rng, (2 * width, width), 1.0 / width))
        self.ff2 = FrozenLinear(_gaussian(frozen_rng, (width, 2 * width), 0.5 / width))

    def __call__(self, x: Tensor, key_bias: np.ndarray | None = None) -> Tensor:
        h = nx.layer_norm(x)
        q, k, v = self.q(h), self.k(h), self.v(h)
        scores = (q @ k.T) * (1.0 / math.sqrt(self.width))
        if key_bias is not None:
            scores = scores + key_bias
        x = x + self.o(nx.softmax(scores, axis=-1) @ v)
        return x + self.ff2(nx.gelu(self.ff1(nx.layer_norm(x))))

    def layers(self):
        for name in ("q", "k", "v", "o", "ff1", "ff2"):
            yield name, getattr(self, name)


class ToyEncoder:
    """Shared block stack; subclasses define how inputs become token embeddings."""

    lora_targets: tuple[str, ...] = ("q", "k", "v")
    _stream = 0

    def __init__(self, width: int = 32, depth: int = 2, rank: int = 16, alpha: float = 32.0,
                 seed: int = 0):
        self.width, self.depth, self.seed = width, depth, seed
        self.rank, self.alpha = rank, alpha
        self._frozen_rng = _rng(seed, self._stream)
        self._lora_rng = _rng(seed, self._stream + 100)
        self._build_embedding(self._frozen_rng)
        self.blocks = [
            AttentionBlock(width, self.lora_targets, rank, alpha, self._frozen_rng, self._lora_rng)
            for _ in range(depth)
        ]

    def _build_embedding(self, rng):
        raise NotImplementedError

    def _run_blocks(self, tokens: Tensor, key_bias=None) -> Tensor:
        for block in self.blocks:
            tokens = block(tokens, key_bias)
        return nx.layer_norm(tokens)[..., 0, :]

    def lora_layers(self) -> Iterator[tuple[str, LoraLinear]]:
        for i, block in enumerate(self.blocks):
            for name, layer in block.layers():
                if isinstance(layer, LoraLinear):
                    yield f"blocks.{i}.{name}", layer

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        yield from self._embedding_tensors()
        for i, block in enumerate(self.blocks):
            for name, layer in block.layers():
                yield from layer.named_tensors(f"blocks.{i}.{name}")

    def trainable_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for prefix, layer in self.lora_layers():
            out.extend(layer.trainable(prefix))
        return out

    def frozen_parameters(self) -> list[tuple[str, Tensor]]:
        trainable = {id(t) for _, t in self.trainable_parameters()}
        return [(n, t) for n, t in self.named_tensors() if id(t) not in trainable]

    def zero_lora(self) -> None:
        for _, layer in self.lora_layers():
            layer.b.data[...] = 0.0


class VisionEncoder(ToyEncoder):
    """Frame encoder: each frame vector is cut into ``n_patches`` equal chunks."""

    lora_targets = ("q", "k", "v")
    _stream = 0

    def __init__(self, patch_dim: int, n_patches: int, width: int = 32, depth: int = 2,
                 rank: int = 16, alpha: float = 32.0, seed: int = 0):
        self.patch_dim, self.n_patches = patch_dim, n_patches
        super().__init__(width, depth, rank, alpha, seed)

    @property
    def input_width(self) -> int:
        return self.patch_dim * self.n_patches

    def _build_embedding(self, rng):
        self.embed = FrozenLinear(_gaussian(rng, (self.width, self.patch_dim), 1.0 / self.patch_dim))
        self.cls = Tensor(_gaussian(rng, (1, self.width), 1.0))
        self.pos = Tensor(_gaussian(rng, (self.n_patches + 1, self.width), 0.1))

    def _embedding_tensors(self):
        yield from self.embed.named_tensors("embed")
        yield "cls", self.cls
        yield "pos", self.pos

    def encode_frames(self, frames) -> Tensor:
        """Encode ``(..., input_width)`` frame vectors to ``(..., width)`` embeddings."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.shape[-1] != self.input_width:
            raise DimensionError(f"frame width {frames.shape[-1]} != encoder input width {self.input_width}")
        lead = frames.shape[:-1]
        patches = frames.reshape(-1, self.n_patches, self.patch_dim)
        embedded = self.embed(Tensor(patches))
        cls = Tensor(np.broadcast_to(self.cls.data, (patches.shape[0], 1, self.width)))
        tokens = nx.concat([cls, embedded], axis=1) + self.pos
        return self._run_blocks(tokens).reshape(lead + (self.width,))


class TextEncoder(ToyEncoder):
    """Sentence encoder over hashed token ids; the key projection carries no adapter."""

    lora_targets = ("q", "v")
    _stream = 1

    def __init__(self, vocab_size: int = 256, max_len: int = 64, width: int = 32, depth: int = 2,
                 rank: int = 16, alpha: float = 32.0, seed: int = 0):
        self.vocab_size, self.max_len = vocab_size, max_len
        super().__init__(width, depth, rank, alpha, seed)

    def _build_embedding(self, rng):
        self.token_embedding = Tensor(_gaussian(rng, (self.vocab_size, self.width), 1.0))
        self.pos = Tensor(_gaussian(rng, (self.max_len + 1, self.width), 0.1))

    def _embedding_tensors(self):
        yield "token_embedding", self.token_embedding
        yield "pos", self.pos

    def encode_batch(self, sequences: Sequence[TokenSequence]) -> Tensor:
        """Summary-token embeddings ``(B, width)``; shorter sequences are padded and masked."""
        if not sequences:
            raise DomainError("no sequences to encode")
        longest = max(len(s.ids) for s in sequences)
        if longest > self.max_len + 1:
            raise DimensionError(f"sequence of {longest - 1} tokens exceeds max_len {self.max_len}")
        ids = np.full((len(sequences), longest), PAD_ID, dtype=np.int64)
        for row, seq in enumerate(sequences):
            if any(i >= self.vocab_size for i in seq.ids):
                raise VocabularyError(f"token id outside vocabulary of size {self.vocab_size}")
            ids[row, : len(seq.ids)] = seq.ids
        tokens = Tensor(self.token_embedding.data[ids] + self.pos.data[:longest])
        key_bias = np.where(ids == PAD_ID, _MASKED, 0.0)[:, None, :]
        return self._run_blocks(tokens, key_bias)


@dataclass
class ClipFeatureSequence:
    """Per-frame embeddings of one clip, shape ``(T, d_v)``."""

    features: Tensor

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DomainError(f"clip features must be (T>=1, d), got {self.features.shape}")

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]


def encode_video_frames(frames, encoder: VisionEncoder) -> ClipFeatureSequence:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise DomainError(f"expected a non-empty (T, width) frame array, got shape {frames.shape}")
    return ClipFeatureSequence(encoder.encode_frames(frames))


def encode_text(tokens: TokenSequence, encoder: TextEncoder) -> Tensor:
    if tokens.ids[0] != CLS_ID:
        raise DomainError("token sequence must start with the summary token")
    return encoder.encode_batch([tokens])[0]


def merged_copy(encoder: ToyEncoder) -> ToyEncoder:
    """Deep copy whose adapters are folded into the dense weights (all ``b`` factors zeroed)."""
    clone = copy.deepcopy(encoder)
    for _, layer in clone.lora_layers():
        layer.weight.data = layer.merge()
        layer.b.data = np.zeros_like(layer.b.data)
    return clone


def pixels_to_vectors(pixels) -> np.ndarray:
    """Flatten ``(..., H, W, C)`` u8 thumbnails to vectors scaled into [-1, 1]."""
    pixels = np.asarray(pixels)
    if pixels.ndim < 3:
        raise DimensionError(f"expected (..., H, W, C) pixels, got shape {pixels.shape}")
    return pixels.reshape(pixels.shape[:-3] + (-1,)).astype(np.float64) / 127.5 - 1.0
