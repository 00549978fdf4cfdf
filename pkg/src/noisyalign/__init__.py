"""Confidence-weighted video-text alignment on a small numpy autodiff engine."""
from .alignment import AlignmentModel, ConfidenceWeightedAligner, contrastive_loss
from .confidence import MaskedConfidenceEstimator, confidence_score
from .config import RunConfig
from .evalkit import LinearProbe, ZeroShotClassifier, evaluate_linear_probe, evaluate_zero_shot

__version__ = "0.1.0"

__all__ = [
    "AlignmentModel",
    "ConfidenceWeightedAligner",
    "LinearProbe",
    "MaskedConfidenceEstimator",
    "RunConfig",
    "ZeroShotClassifier",
    "confidence_score",
    "contrastive_loss",
    "evaluate_linear_probe",
    "evaluate_zero_shot",
]
