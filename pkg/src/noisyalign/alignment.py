"""Projection heads, the confidence-weighted contrastive objective, and training."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import numerics as nx
from .adapters import TextEncoder, VisionEncoder, merged_copy
from .confidence import CONFIDENCE_FLOOR, Narrative, rescale_confidences
from .exceptions import ContractError, DegenerateVectorError, DimensionError, TrainingDivergenceError
from .numerics import Tensor
from .pooling import TemporalPooler
from .tokens import TokenSequence, tokenize

TAU_MIN, TAU_MAX = 0.01, 1.0
UNIT_TOL = 1e-6


class ProjectionHead:
    """Linear -> layer norm -> GELU -> linear."""

    def __init__(self, d_in: int, d_out: int, seed: int = 0, stream: int = 3):
        rng = np.random.default_rng([int(seed), stream])
        self.d_in, self.d_out = d_in, d_out
        self.w1 = Tensor(rng.normal(0.0, math.sqrt(1.0 / d_in), size=(d_in, d_in)), requires_grad=True)
        self.b1 = Tensor(np.zeros(d_in), requires_grad=True)
        self.w2 = Tensor(rng.normal(0.0, math.sqrt(1.0 / d_in), size=(d_out, d_in)), requires_grad=True)
        self.b2 = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x) -> Tensor:
        x = nx.as_tensor(x)
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"feature width {x.shape[-1]} != head input width {self.d_in}")
        hidden = nx.gelu(nx.layer_norm(x @ self.w1.T + self.b1))
        return hidden @ self.w2.T + self.b2

    def named_tensors(self):
        yield "w1", self.w1
        yield "b1", self.b1
        yield "w2", self.w2
        yield "b2", self.b2


def project_and_normalize(feature, head: ProjectionHead) -> Tensor:
    return nx.l2_normalize(head(feature), axis=-1)


def _check_unit_rows(z: np.ndarray, name: str) -> None:
    norms = np.linalg.norm(z, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise ContractError(f"{name} rows must be unit-norm (max deviation {np.max(np.abs(norms - 1.0)):.3g})")


def directional_losses(zv, zt, c, tau) -> tuple[Tensor, Tensor]:
    """Per-sample weighted video->text and text->video InfoNCE terms, each shape ``(B,)``."""
    zv, zt = nx.as_tensor(zv), nx.as_tensor(zt)
    if zv.ndim != 2 or zv.shape != zt.shape:
        raise DimensionError(f"embedding batches must share a (B, D) shape, got {zv.shape} and {zt.shape}")
    _check_unit_rows(zv.data, "video embedding")
    _check_unit_rows(zt.data, "text embedding")
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (zv.shape[0],):
        raise DimensionError(f"expected {zv.shape[0]} confidences, got shape {c.shape}")
    if np.any(c <= 0.0) or np.any(c > 1.0):
        raise ContractError("confidences must lie in (0, 1]")
    tau_value = float(nx.as_tensor(tau).data)
    if not TAU_MIN - 1e-12 <= tau_value <= TAU_MAX + 1e-12:
        raise ContractError(f"temperature {tau_value} outside [{TAU_MIN}, {TAU_MAX}]")

    logits = (zv @ zt.T) / tau
    positives = (zv * zt).sum(axis=1) / tau
    v2t = (nx.logsumexp(logits, axis=1) - positives) * c
    t2v = (nx.logsumexp(logits, axis=0) - positives) * c
    return v2t, t2v


def contrastive_loss(zv, zt, c, tau) -> Tensor:
    """Bidirectional InfoNCE with per-pair weights, averaged over ``2B`` terms."""
    v2t, t2v = directional_losses(zv, zt, c, tau)
    return (v2t.sum() + t2v.sum()) * (1.0 / (2 * v2t.shape[0]))


class AlignmentModel:
    """Both encoders, the temporal pooler, both projection heads, and the log-temperature."""

    def __init__(self, vision: VisionEncoder, text: TextEncoder, pooler: TemporalPooler,
                 proj_v: ProjectionHead, proj_t: ProjectionHead, init_tau: float = 0.07):
        if proj_v.d_out != proj_t.d_out:
            raise DimensionError("projection heads must share their output width")
        self.vision, self.text, self.pooler = vision, text, pooler
        self.proj_v, self.proj_t = proj_v, proj_t
        self.log_tau = Tensor(math.log(init_tau), requires_grad=True)

    @classmethod
    def build(cls, *, patch_dim: int, n_patches: int, d_v: int = 32, d_t: int = 32, proj_dim: int = 32,
              depth: int = 2, vocab_size: int = 256, max_text_len: int = 64, rank: int = 16,
              alpha: float = 32.0, init_tau: float = 0.07, seed: int = 0) -> AlignmentModel:
        vision = VisionEncoder(patch_dim, n_patches, d_v, depth, rank, alpha, seed)
        text = TextEncoder(vocab_size, max_text_len, d_t, depth, rank, alpha, seed)
        return cls(vision, text, TemporalPooler(d_v, seed), ProjectionHead(d_v, proj_dim, seed, 3),
                   ProjectionHead(d_t, proj_dim, seed, 4), init_tau)

    @property
    def tau(self) -> float:
        return float(np.exp(np.clip(self.log_tau.data, math.log(TAU_MIN), math.log(TAU_MAX))))

    def temperature(self) -> Tensor:
        return nx.exp(nx.clip(self.log_tau, math.log(TAU_MIN), math.log(TAU_MAX)))

    def pooled_clips(self, frames) -> Tensor:
        """``(B, T, F)`` frame vectors -> ``(B, d_v)`` pooled clip features."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[1] == 0:
            raise DimensionError(f"expected (B, T>=1, F) frames, got shape {frames.shape}")
        return self.pooler(self.vision.encode_frames(frames))[0]

    def embed_clips(self, frames) -> Tensor:
        return project_and_normalize(self.pooled_clips(frames), self.proj_v)

    def embed_texts(self, sequences: Sequence[TokenSequence]) -> Tensor:
        return project_and_normalize(self.text.encode_batch(sequences), self.proj_t)

    def loss(self, frames, sequences: Sequence[TokenSequence], confidences) -> Tensor:
        return contrastive_loss(self.embed_clips(frames), self.embed_texts(sequences), confidences,
                                self.temperature())

    # --- parameters -----------------------------------------------------------
    def base_parameters(self) -> list[tuple[str, Tensor]]:
        params = [(f"vision.{n}", t) for n, t in self.vision.trainable_parameters()]
        params += [(f"text.{n}", t) for n, t in self.text.trainable_parameters()]
        return params + [("log_tau", self.log_tau)]

    def head_parameters(self) -> list[tuple[str, Tensor]]:
        params = [(f"pooler.{n}", t) for n, t in self.pooler.named_tensors()]
        params += [(f"proj_v.{n}", t) for n, t in self.proj_v.named_tensors()]
        return params + [(f"proj_t.{n}", t) for n, t in self.proj_t.named_tensors()]

    def trainable_parameters(self) -> list[tuple[str, Tensor]]:
        return self.base_parameters() + self.head_parameters()

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [(f"vision.{n}", t) for n, t in self.vision.named_tensors()]
        out += [(f"text.{n}", t) for n, t in self.text.named_tensors()]
        return out + self.head_parameters() + [("log_tau", self.log_tau)]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_tensors()}

    def load_state_dict(self, state) -> None:
        tensors = dict(self.named_tensors())
        missing = set(tensors) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks {sorted(missing)}")
        for name, t in tensors.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != t.shape:
                raise DimensionError(f"{name}: checkpoint shape {value.shape} != model shape {t.shape}")
            t.data = value.copy()

    def zero_grad(self) -> None:
        for _, t in self.trainable_parameters():
            t.grad = None

    def clamp_temperature(self) -> None:
        self.log_tau.data = np.clip(self.log_tau.data, math.log(TAU_MIN), math.log(TAU_MAX))


# --- optimization -------------------------------------------------------------
def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    if total_steps <= 0:
        return base_lr
    progress = min(step, total_steps) / total_steps
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))


@dataclass
class ParamGroup:
    params: list[Tensor]
    lr_multiplier: float = 1.0
    decay: bool = True


class AdamW:
    """Adam with decoupled weight decay and a cosine-decayed base rate shared by all groups."""

    def __init__(self, groups: Sequence[ParamGroup], base_lr: float, total_steps: int,
                 weight_decay: float = 0.01, betas=(0.9, 0.999), eps: float = 1e-8):
        self.groups = list(groups)
        self.base_lr, self.total_steps = base_lr, total_steps
        self.weight_decay, self.betas, self.eps = weight_decay, betas, eps
        self.step_count = 0
        self.m = {id(p): np.zeros_like(p.data) for g in self.groups for p in g.params}
        self.v = {id(p): np.zeros_like(p.data) for g in self.groups for p in g.params}

    @classmethod
    def for_model(cls, model: AlignmentModel, base_lr: float, total_steps: int,
                  head_lr_multiplier: float = 10.0, weight_decay: float = 0.01) -> AdamW:
        lora = [t for n, t in model.base_parameters() if n != "log_tau"]
        heads = [t for n, t in model.head_parameters() if not n.split(".")[-1].startswith("b")]
        biases = [t for n, t in model.head_parameters() if n.split(".")[-1].startswith("b")]
        groups = [
            ParamGroup(lora),
            ParamGroup([model.log_tau], decay=False),
            ParamGroup(heads, head_lr_multiplier),
            ParamGroup(biases, head_lr_multiplier, decay=False),
        ]
        return cls(groups, base_lr, total_steps, weight_decay)

    @property
    def current_lr(self) -> float:
        return cosine_lr(self.base_lr, self.step_count, self.total_steps)

    def step(self) -> None:
        lr = self.current_lr
        beta1, beta2 = self.betas
        t = self.step_count + 1
        for group in self.groups:
            group_lr = lr * group.lr_multiplier
            for p in group.params:
                if p.grad is None:
                    continue
                m, v = self.m[id(p)], self.v[id(p)]
                m *= beta1
                m += (1.0 - beta1) * p.grad
                v *= beta2
                v += (1.0 - beta2) * p.grad * p.grad
                m_hat = m / (1.0 - beta1**t)
                v_hat = v / (1.0 - beta2**t)
                if group.decay and self.weight_decay:
                    p.data = p.data * (1.0 - group_lr * self.weight_decay)
                p.data = p.data - group_lr * m_hat / (np.sqrt(v_hat) + self.eps)
        self.step_count = t


@dataclass
class TrainingBatch:
    """Clip frame vectors ``(B, T, F)`` paired row-for-row with narratives."""

    frames: np.ndarray
    narratives: list[Narrative]

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or len(self.narratives) != self.frames.shape[0]:
            raise DimensionError(
                f"{len(self.narratives)} narratives cannot pair with frames of shape {self.frames.shape}"
            )

    @property
    def size(self) -> int:
        return len(self.narratives)


def train_step(batch: TrainingBatch, model: AlignmentModel, optimizer: AdamW,
               rescale: str = "none", floor: float = CONFIDENCE_FLOOR) -> float:
    """One forward/backward/update; leaves the model untouched if the loss or gradients blow up."""
    if batch.size < 2:
        raise ContractError("training needs at least two pairs per batch")
    confidences = rescale_confidences([n.confidence for n in batch.narratives], rescale, floor)
    model.zero_grad()
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            loss = model.loss(batch.frames, [n.tokens for n in batch.narratives], confidences)
        except (DegenerateVectorError, FloatingPointError) as exc:
            raise TrainingDivergenceError(f"forward pass failed: {exc}") from exc
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDivergenceError(f"non-finite loss {value}")
        loss.backward()
        for name, p in model.trainable_parameters():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise TrainingDivergenceError(f"non-finite gradient in {name}")
        optimizer.step()
    model.clamp_temperature()
    return value


class ConfidenceWeightedAligner(BaseEstimator):
    """Estimator wrapper: ``fit`` trains the alignment model on (clips, captions, confidences).

    Parameters
    ----------
    n_patches : int
        Number of equal chunks each frame vector is cut into (tokens per frame).
    lora_rank, lora_alpha : int, float
        Adapter rank and scaling.
    base_lr : float
        Peak rate for LoRA factors and the temperature; heads and pooler use
        ``base_lr * head_lr_multiplier``.
    use_confidence : bool
        When False every pair gets weight 1 (the unweighted InfoNCE baseline).

    Attributes
    ----------
    model_ : AlignmentModel
    history_ : list of dict
        One ``{step, loss, tau, lr}`` row per optimizer step.
    epoch_losses_ : list of float
        Mean training loss of each epoch.
    """

    def __init__(self, n_patches: int = 4, d_v: int = 32, d_t: int = 32, proj_dim: int = 32,
                 depth: int = 2, vocab_size: int = 256, max_text_len: int = 64, lora_rank: int = 16,
                 lora_alpha: float = 32.0, base_lr: float = 2e-4, head_lr_multiplier: float = 10.0,
                 epochs: int = 10, batch_size: int = 16, weight_decay: float = 0.01,
                 init_tau: float = 0.07, use_confidence: bool = True, confidence_rescale: str = "none",
                 confidence_floor: float = CONFIDENCE_FLOOR, random_state: int = 0):
        self.n_patches = n_patches
        self.d_v = d_v
        self.d_t = d_t
        self.proj_dim = proj_dim
        self.depth = depth
        self.vocab_size = vocab_size
        self.max_text_len = max_text_len
        self.lora_rank = lora_rank
        self.lora_alpha = lora_alpha
        self.base_lr = base_lr
        self.head_lr_multiplier = head_lr_multiplier
        self.epochs = epochs
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.init_tau = init_tau
        self.use_confidence = use_confidence
        self.confidence_rescale = confidence_rescale
        self.confidence_floor = confidence_floor
        self.random_state = random_state

    @classmethod
    def from_config(cls, cfg) -> ConfidenceWeightedAligner:
        return cls(
            n_patches=cfg.model.frame_height, d_v=cfg.model.d_v, d_t=cfg.model.d_t,
            proj_dim=cfg.model.proj_dim, depth=cfg.model.depth, vocab_size=cfg.model.vocab_size,
            max_text_len=cfg.model.max_text_len, lora_rank=cfg.lora.r, lora_alpha=cfg.lora.alpha,
            base_lr=cfg.optim.base_lr, head_lr_multiplier=cfg.optim.head_lr_multiplier,
            epochs=cfg.optim.epochs, batch_size=cfg.optim.batch_size,
            weight_decay=cfg.optim.weight_decay, init_tau=cfg.optim.init_tau,
            use_confidence=cfg.confidence.enabled, confidence_rescale=cfg.confidence.rescale,
            confidence_floor=cfg.confidence.floor, random_state=cfg.seed,
        )

    def build_model(self, frame_width: int) -> AlignmentModel:
        if frame_width % self.n_patches:
            raise DimensionError(f"frame width {frame_width} is not divisible into {self.n_patches} patches")
        return AlignmentModel.build(
            patch_dim=frame_width // self.n_patches, n_patches=self.n_patches, d_v=self.d_v,
            d_t=self.d_t, proj_dim=self.proj_dim, depth=self.depth, vocab_size=self.vocab_size,
            max_text_len=self.max_text_len, rank=self.lora_rank, alpha=self.lora_alpha,
            init_tau=self.init_tau, seed=self.random_state,
        )

    def _sequences(self, captions) -> list[TokenSequence]:
        return [c if isinstance(c, TokenSequence) else tokenize(c, self.vocab_size) for c in captions]

    def fit(self, X, y, sample_weight=None, callback: Callable[[dict], None] | None = None):
        """Train on clips ``X`` (N, T, F) and captions ``y``; ``sample_weight`` holds confidences."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3:
            raise DimensionError(f"X must be (N, T, F), got shape {X.shape}")
        sequences = self._sequences(y)
        if len(sequences) != X.shape[0]:
            raise DimensionError(f"{X.shape[0]} clips but {len(sequences)} captions")
        if X.shape[0] < 2:
            raise ContractError("training needs at least two pairs")
        if self.use_confidence and sample_weight is not None:
            weights = np.asarray(sample_weight, dtype=np.float64)
        else:
            weights = np.ones(X.shape[0])
        narratives = [Narrative(s, float(w)) for s, w in zip(sequences, weights)]

        self.model_ = self.build_model(X.shape[2])
        n = X.shape[0]
        batches = _batch_bounds(n, self.batch_size)
        self.optimizer_ = AdamW.for_model(
            self.model_, self.base_lr, self.epochs * len(batches), self.head_lr_multiplier, self.weight_decay
        )
        self.history_, self.epoch_losses_ = [], []
        # One seeded partition into batches for the whole run; only the batch order changes per
        # epoch, so every epoch averages over the same set of in-batch negatives.
        order = np.random.default_rng([int(self.random_state), 7]).permutation(n)
        for epoch in range(self.epochs):
            losses = []
            for j in np.random.default_rng([int(self.random_state), 8, epoch]).permutation(len(batches)):
                lo, hi = batches[j]
                idx = order[lo:hi]
                batch = TrainingBatch(X[idx], [narratives[i] for i in idx])
                lr = self.optimizer_.current_lr
                loss = train_step(batch, self.model_, self.optimizer_, self.confidence_rescale,
                                  self.confidence_floor)
                row = {"step": self.optimizer_.step_count, "loss": loss, "tau": self.model_.tau, "lr": lr}
                self.history_.append(row)
                losses.append(loss)
                if callback is not None:
                    callback(row)
            self.epoch_losses_.append(float(np.mean(losses)))
        return self

    def transform(self, X) -> np.ndarray:
        """Unit-norm clip embeddings in the shared space."""
        check_is_fitted(self, "model_")
        return self.model_.embed_clips(X).numpy()

    def pooled_features(self, X, merged: bool = True) -> np.ndarray:
        """Pooled ``(N, d_v)`` clip features before projection; ``merged`` folds LoRA into the weights."""
        check_is_fitted(self, "model_")
        vision = merged_copy(self.model_.vision) if merged else self.model_.vision
        frames = np.asarray(X, dtype=np.float64)
        return self.model_.pooler(vision.encode_frames(frames))[0].numpy()

    def embed_text(self, captions) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.embed_texts(self._sequences(captions)).numpy()


def _batch_bounds(n: int, batch_size: int) -> list[tuple[int, int]]:
    """Contiguous batch ranges; a trailing batch of one is folded into its predecessor."""
    bounds = [(lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < 2:
        last = bounds.pop()
        bounds[-1] = (bounds[-1][0], last[1])
    return bounds
