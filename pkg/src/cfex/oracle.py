"""Brute-force and closed-form ground truths for small explanation problems.

Used by tests and the acceptance suite to bound what the trained heads can
achieve: exhaustive minimum sufficient masks and tight single-coordinate
addition thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .formats import ClassifierHead
from .model import logits_of

MAX_ENUM_FILTERS = 20


@dataclass
class OracleResult:
    feasible: bool
    enumerated: int
    mask: np.ndarray | None = None  # binary (n,) for the mask search
    coordinate: int | None = None  # for the single-addition search
    amount: float | None = None
    objective: float | None = None  # mask cardinality / boundary addition


def min_sufficient_mask(g, classifier: ClassifierHead, target) -> OracleResult:
    """Exhaustive minimum-cardinality binary mask keeping argmax at ``target``.

    Ties: larger target logit, then lexicographically smallest mask tuple.
    """
    g = np.asarray(g, dtype=np.float64)
    n = len(g)
    if n > MAX_ENUM_FILTERS:
        raise ValidationError(f"enumeration bounded to n <= {MAX_ENUM_FILTERS}, got {n}")
    total = 1 << n
    W = classifier.weights.astype(np.float64)
    b = classifier.bias.astype(np.float64)
    best = None  # (cardinality, -target logit, mask tuple, mask array)
    for start in range(0, total, 1 << 16):
        codes = np.arange(start, min(start + (1 << 16), total), dtype=np.int64)
        masks = ((codes[:, None] >> np.arange(n)) & 1).astype(np.float64)
        Z = (masks * g) @ W + b
        hits = np.flatnonzero(np.argmax(Z, axis=1) == target)
        for c in hits:
            mask = masks[c]
            key = (mask.sum(), -Z[c, target], tuple(mask.astype(int)))
            if best is None or key < best[0]:
                best = (key, mask)
    if best is None:
        return OracleResult(feasible=False, enumerated=total)
    mask = best[1]
    return OracleResult(feasible=True, enumerated=total, mask=mask,
                        objective=float(mask.sum()))


def min_single_addition(g, classifier: ClassifierHead, alter) -> OracleResult:
    """Smallest boundary amount on a single filter flipping argmax to ``alter``.

    For each coordinate k the boundary is the largest (z_j - z_alter) /
    (W[k, alter] - W[k, j]) over positive denominators; coordinates where a
    class with z_j >= z_alter has a non-positive denominator can never flip.
    Any amount strictly above the boundary flips; the boundary itself is a lower
    bound on the multi-coordinate l1 optimum only for this one-coordinate family.
    """
    g = np.asarray(g, dtype=np.float64)
    z = logits_of(g, classifier)
    current = int(np.argmax(z))
    if current == alter:
        raise ValidationError("alter class already is the argmax")
    W = classifier.weights.astype(np.float64)
    n, C = W.shape
    best_k, best_delta = None, np.inf
    enumerated = 0
    for k in range(n):
        denom = W[k, alter] - W[k]  # over classes j
        delta_k = 0.0
        feasible = True
        for j in range(C):
            if j == alter:
                continue
            enumerated += 1
            if denom[j] > 0:
                delta_k = max(delta_k, (z[j] - z[alter]) / denom[j])
            elif z[j] >= z[alter]:
                feasible = False
                break
        if feasible and delta_k < best_delta:
            best_k, best_delta = k, delta_k
    if best_k is None:
        return OracleResult(feasible=False, enumerated=enumerated)
    return OracleResult(feasible=True, enumerated=enumerated, coordinate=best_k,
                        amount=float(best_delta), objective=float(best_delta))
