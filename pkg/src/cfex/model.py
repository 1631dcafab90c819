"""Frozen-classifier inference over GAP feature vectors.

Plain, masked and additively-modified predictions.  All arithmetic is done
in float64 regardless of the storage dtype; softmax uses max-subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .formats import ClassifierHead


@dataclass
class Prediction:
    probs: np.ndarray  # (C,) float64, sums to 1
    top_class: int  # argmax, ties to the lower index
    logits: np.ndarray  # (C,) float64


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def logits_of(g, head: ClassifierHead):
    g = np.asarray(g, dtype=np.float64)
    if g.shape[-1] != head.n:
        raise ValidationError(f"feature vector length {g.shape[-1]} != head n {head.n}")
    return g @ head.weights.astype(np.float64) + head.bias.astype(np.float64)


def classify(g, head: ClassifierHead) -> Prediction:
    """Affine head + softmax on a single GAP feature vector."""
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ValidationError("non-finite feature vector")
    z = logits_of(g, head)
    p = softmax(z)
    return Prediction(probs=p, top_class=int(np.argmax(p)), logits=z)


def masked_classify(g, mask, head: ClassifierHead) -> Prediction:
    """Prediction with all but the masked-in filters disabled (Hadamard mask)."""
    g = np.asarray(g, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != g.shape:
        raise ValidationError(f"mask shape {mask.shape} != feature shape {g.shape}")
    if np.any(mask < 0) or np.any(mask > 1):
        raise ValidationError("mask entries must lie in [0, 1]")
    return classify(g * mask, head)


def additive_classify(g, addition, head: ClassifierHead) -> Prediction:
    """Prediction after raising filter activations by a non-negative amount."""
    g = np.asarray(g, dtype=np.float64)
    addition = np.asarray(addition, dtype=np.float64)
    if addition.shape != g.shape:
        raise ValidationError(f"addition shape {addition.shape} != feature shape {g.shape}")
    if np.any(addition < 0):
        raise ValidationError("addition entries must be >= 0")
    return classify(g + addition, head)


def batch_logits(G, head: ClassifierHead):
    """Logits for a (m, n) batch of feature vectors, float64."""
    G = np.asarray(G, dtype=np.float64)
    return G @ head.weights.astype(np.float64) + head.bias.astype(np.float64)


def batch_top_class(G, head: ClassifierHead):
    return np.argmax(batch_logits(G, head), axis=1)
