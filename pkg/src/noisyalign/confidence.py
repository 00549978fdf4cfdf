"""Caption reliability from masked-token recovery probabilities.

A sentence's confidence is the mean, over its word positions, of the
probability a masked scorer assigns to the original token when that single
position is masked and every other token stays visible.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence, runtime_checkable

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ContractError, DomainError, VocabularyError
from .tokens import DEFAULT_VOCAB_SIZE, TokenSequence, tokenize

CONFIDENCE_FLOOR = 1e-6
RESCALE_MODES = ("none", "batch-mean")


@runtime_checkable
class MaskedScorer(Protocol):
    def score(self, context: TokenSequence, position: int, original: int) -> float:
        """Probability in [0, 1] of ``original`` at masked word ``position`` of ``context``."""


class UniformScorer:
    """Assigns 1/V to every token regardless of context."""

    def __init__(self, vocab_size: int = DEFAULT_VOCAB_SIZE):
        self.vocab_size = vocab_size

    def score(self, context, position, original):
        return 1.0 / self.vocab_size


class ToyCountScorer:
    """Laplace-smoothed unigram model, ``P(w) = (count(w) + 1) / (N + V)``.

    The masked context is ignored entirely, which makes this a stand-in for a
    real masked language model rather than an approximation of one.
    """

    def __init__(self, counts, smoothing: float = 1.0):
        self.counts = np.asarray(counts, dtype=np.float64)
        self.smoothing = smoothing
        self.vocab_size = len(self.counts)
        self.total = float(self.counts.sum())

    def proba(self) -> np.ndarray:
        return (self.counts + self.smoothing) / (self.total + self.smoothing * self.vocab_size)

    def score(self, context, position, original):
        if not 0 <= original < self.vocab_size:
            raise VocabularyError(f"token id {original} outside vocabulary of size {self.vocab_size}")
        return (self.counts[original] + self.smoothing) / (self.total + self.smoothing * self.vocab_size)


def fit_toy_scorer(corpus: Iterable[TokenSequence], vocab_size: int = DEFAULT_VOCAB_SIZE) -> ToyCountScorer:
    if vocab_size < 1:
        raise DomainError("vocabulary size must be positive")
    counts = np.zeros(vocab_size, dtype=np.int64)
    for seq in corpus:
        words = np.asarray(seq.words, dtype=np.int64)
        if words.size and (words.min() < 0 or words.max() >= vocab_size):
            raise VocabularyError(f"corpus token outside vocabulary of size {vocab_size}")
        np.add.at(counts, words, 1)
    return ToyCountScorer(counts)


def confidence_score(sentence: TokenSequence, scorer: MaskedScorer, floor: float = CONFIDENCE_FLOOR) -> float:
    """Mean single-mask recovery probability, clamped into ``[floor, 1]``."""
    if len(sentence) < 1:
        raise DomainError("cannot score an empty sentence")
    total = 0.0
    for k, original in enumerate(sentence.words):
        p = float(scorer.score(sentence.masked(k), k, original))
        if not 0.0 <= p <= 1.0:
            raise ContractError(f"scorer returned {p}, outside [0, 1]")
        total += p
    return min(1.0, max(floor, total / len(sentence)))


def rescale_confidences(c, mode: str = "none", floor: float = CONFIDENCE_FLOOR) -> np.ndarray:
    """Optional batch calibration: ``batch-mean`` divides by the batch mean, then clamps to ``[floor, 1]``."""
    c = np.asarray(c, dtype=np.float64)
    if mode == "none":
        return c
    if mode == "batch-mean":
        return np.clip(c / c.mean(), floor, 1.0)
    raise ValueError(f"unknown rescale mode {mode!r}; expected one of {RESCALE_MODES}")


@dataclass(frozen=True)
class Narrative:
    tokens: TokenSequence
    confidence: float

    def __post_init__(self):
        if not 0.0 < self.confidence <= 1.0:
            raise ContractError(f"confidence {self.confidence} outside (0, 1]")


class MaskedConfidenceEstimator(TransformerMixin, BaseEstimator):
    """Fit a count scorer on a reference corpus, then map captions to confidences.

    Parameters
    ----------
    vocab_size : int, default=256
        Size of the hashed vocabulary.
    floor : float, default=1e-6
        Lower clamp that keeps every confidence strictly positive.
    scorer : MaskedScorer or None, default=None
        Use this scorer instead of fitting a count model.
    """

    def __init__(self, vocab_size: int = DEFAULT_VOCAB_SIZE, floor: float = CONFIDENCE_FLOOR, scorer=None):
        self.vocab_size = vocab_size
        self.floor = floor
        self.scorer = scorer

    def fit(self, X, y=None):
        if self.scorer is not None:
            self.scorer_ = self.scorer
        else:
            self.scorer_ = fit_toy_scorer(self._as_sequences(X), self.vocab_size)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "scorer_")
        return np.array([confidence_score(s, self.scorer_, self.floor) for s in self._as_sequences(X)])

    def _as_sequences(self, X) -> list[TokenSequence]:
        return [s if isinstance(s, TokenSequence) else tokenize(s, self.vocab_size) for s in X]


def write_confidence_report(path, clip_ids: Sequence[str], sentences: Sequence[TokenSequence], confidences) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for clip_id, seq, c in zip(clip_ids, sentences, confidences):
            fh.write(json.dumps({"clip_id": clip_id, "token_count": len(seq), "confidence": float(c)}) + "\n")


def read_confidence_report(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
