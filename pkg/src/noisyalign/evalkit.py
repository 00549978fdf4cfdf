"""Zero-shot classification, linear probing, and accuracy / macro-F1 scoring."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ContractError, DegenerateSplitError, DimensionError, DomainError

UNIT_TOL = 1e-6


@dataclass
class PhasePromptSet:
    """One unit-norm text embedding per class, shape (K, D)."""

    class_names: list[str]
    embeddings: np.ndarray

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if len(self.class_names) < 2 or self.embeddings.shape[0] != len(self.class_names):
            raise DimensionError("need at least two classes, one embedding row each")
        if np.any(np.abs(np.linalg.norm(self.embeddings, axis=1) - 1.0) > UNIT_TOL):
            raise ContractError("class embeddings must be unit-norm")

    @classmethod
    def from_prompts(cls, prompts: Mapping[str, Sequence[str]], embed_text) -> PhasePromptSet:
        """Average the embeddings of each class's prompts and renormalize.

        ``embed_text`` maps a list of strings to unit-norm rows.
        """
        names, rows = [], []
        for name, texts in prompts.items():
            if isinstance(texts, str):
                texts = [texts]
            if not texts:
                raise DomainError(f"class {name!r} has no prompts")
            mean = np.asarray(embed_text(list(texts)), dtype=np.float64).mean(axis=0)
            rows.append(mean / np.linalg.norm(mean))
            names.append(name)
        return cls(names, np.stack(rows))


def load_prompts(path) -> dict[str, list[str]]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict) or not all(isinstance(v, list) for v in data.values()):
        raise ContractError(f"{path}: expected an object mapping class names to prompt lists")
    return data


def zero_shot_classify(clip_embedding, prompts: PhasePromptSet | np.ndarray) -> int:
    """Index of the class embedding with the largest dot product; ties go to the lowest index."""
    table = prompts.embeddings if isinstance(prompts, PhasePromptSet) else np.asarray(prompts, dtype=np.float64)
    z = np.asarray(clip_embedding, dtype=np.float64)
    if z.shape != (table.shape[1],):
        raise DimensionError(f"clip embedding shape {z.shape} does not match prompt width {table.shape[1]}")
    if abs(np.linalg.norm(z) - 1.0) > UNIT_TOL:
        raise ContractError("clip embedding must be unit-norm")
    return int(np.argmax(table @ z))


def metrics(preds, labels, n_classes: int) -> dict:
    """Accuracy and macro F1; a class with zero precision and recall contributes F1 = 0."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise DimensionError(f"preds {preds.shape} and labels {labels.shape} must be equal-length vectors")
    if preds.size == 0:
        raise DomainError("cannot score an empty prediction set")
    for arr in (preds, labels):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise DomainError(f"class ids must lie in [0, {n_classes})")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    tp = np.diag(confusion).astype(np.float64)
    predicted = confusion.sum(axis=0)
    actual = confusion.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return {
        "accuracy": float(tp.sum() / preds.size),
        "macro_f1": float(f1.mean()),
        "per_class_f1": [float(v) for v in f1],
    }


class ZeroShotClassifier(ClassifierMixin, BaseEstimator):
    """Nearest-prompt classifier over an already fitted aligner.

    ``fit`` only embeds the prompts; no weights are learned.
    """

    def __init__(self, aligner=None, prompts: Mapping[str, Sequence[str]] | None = None):
        self.aligner = aligner
        self.prompts = prompts

    def fit(self, X=None, y=None):
        self.prompt_set_ = PhasePromptSet.from_prompts(self.prompts, self.aligner.embed_text)
        self.classes_ = np.arange(len(self.prompt_set_.class_names))
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "prompt_set_")
        z = self.aligner.transform(X)
        if z.shape[1] != self.prompt_set_.embeddings.shape[1]:
            raise DimensionError(
                f"model embedding width {z.shape[1]} != prompt width {self.prompt_set_.embeddings.shape[1]}"
            )
        return np.array([zero_shot_classify(row, self.prompt_set_) for row in z])


def evaluate_zero_shot(frames, labels, aligner, prompts: Mapping[str, Sequence[str]]) -> dict:
    """Clip-level zero-shot protocol: embed, pick nearest prompt, score."""
    clf = ZeroShotClassifier(aligner, prompts).fit()
    preds = clf.predict(frames)
    result = metrics(preds, labels, len(clf.classes_))
    return {"protocol": "zero-shot", **result}


class LinearProbe(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression trained by full-batch gradient descent.

    Parameters
    ----------
    epochs : int, default=500
    lr : float, default=0.1
    n_classes : int or None
        Number of classes; inferred as ``max(y) + 1`` when None.
    random_state : int, default=0
        Seeds the small Gaussian weight initialization.
    """

    def __init__(self, epochs: int = 500, lr: float = 0.1, n_classes: int | None = None,
                 random_state: int = 0):
        self.epochs = epochs
        self.lr = lr
        self.n_classes = n_classes
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, copy=False)
        y = y.astype(np.int64)
        k = self.n_classes if self.n_classes is not None else int(y.max()) + 1
        missing = sorted(set(range(k)) - set(y.tolist()))
        if missing:
            raise DegenerateSplitError(f"classes {missing} are absent from the training labels")
        n, d = X.shape
        rng = np.random.default_rng(self.random_state)
        self.initial_coef_ = rng.normal(0.0, 0.01, size=(k, d))
        W = self.initial_coef_.copy()
        b = np.zeros(k)
        onehot = np.eye(k)[y]
        for _ in range(self.epochs):
            logits = X @ W.T + b
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            err = (p - onehot) / n
            W = W - self.lr * (err.T @ X)
            b = b - self.lr * err.sum(axis=0)
        self.coef_, self.intercept_ = W, b
        self.classes_ = np.arange(k)
        self.n_features_in_ = d
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return X @ self.coef_.T + self.intercept_

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)


def evaluate_linear_probe(train_features, train_labels, test_features, test_labels,
                          epochs: int = 500, lr: float = 0.1, random_state: int = 0) -> dict:
    k = int(max(np.max(train_labels), np.max(test_labels))) + 1
    probe = LinearProbe(epochs, lr, k, random_state).fit(train_features, train_labels)
    return {"protocol": "linear-probe", **metrics(probe.predict(test_features), test_labels, k)}


def write_results(path, result: dict) -> None:
    keys = ("protocol", "accuracy", "macro_f1", "per_class_f1")
    Path(path).write_text(json.dumps({k: result[k] for k in keys}, indent=2) + "\n")

