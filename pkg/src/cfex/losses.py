"""Composite objectives for both explainer heads and their analytic gradients.

The mask-head objective is  ce + lambda * l1 - logits_term  where the logits
term rewards keeping filters that feed the target class's logit.  The
addition-head objective drops the logits term.  All components are batch
means in float64; gradients are hand-derived and checked against central
finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .formats import ClassifierHead
from .heads import McHead, MiHead, mc_sigmoid
from .model import softmax

LOG_CLAMP = 1e-12


@dataclass
class LossBreakdown:
    ce: float
    l1: float
    logits_term: float  # subtracted from the total; 0 when unused
    total: float

    def to_json(self):
        return {"ce": self.ce, "l1": self.l1, "logits_term": self.logits_term,
                "total": self.total}


def ce_loss(probs, target):
    """Negative log-likelihood of the target class, clamped away from -inf."""
    probs = np.asarray(probs, dtype=np.float64)
    if not (0 <= target < probs.shape[-1]):
        raise ValidationError(f"target {target} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(probs[target], LOG_CLAMP)))


def l1_loss(f):
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise ValidationError("l1 input must be non-negative")
    return float(f.sum())


def logits_contribution(f, g, head: ClassifierHead, target, absolute=False):
    """Target-class logit mass carried by the retained filters: sum f*g*W[:,target].

    ``absolute`` switches to per-term absolute values (since f and g are
    non-negative this only rectifies the classifier weight).
    """
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if f.shape != g.shape or f.shape[-1] != head.n:
        raise ValidationError("mask/feature length mismatch with the classifier head")
    w = head.weights.astype(np.float64)[:, target]
    if absolute:
        w = np.abs(w)
    return float((f * g * w).sum())


def _as_targets(target, m):
    t = np.asarray(target, dtype=np.int64)
    if t.ndim == 0:
        return np.full(m, int(t), dtype=np.int64)
    if t.shape != (m,):
        raise ValidationError(f"targets shape {t.shape} does not match batch size {m}")
    return t


def _batch_probs(U, classifier):
    Z = U @ classifier.weights.astype(np.float64) + classifier.bias.astype(np.float64)
    return softmax(Z)


def _mean_ce(P, targets):
    picked = np.maximum(P[np.arange(len(targets)), targets], LOG_CLAMP)
    return float(np.mean(-np.log(picked)))


def _mc_forward_pieces(G, head):
    A = G @ head.weight.astype(np.float64).T + head.bias.astype(np.float64)
    S = 1.0 / (1.0 + np.exp(-np.clip(A, -500, 500)))
    supp = S >= head.threshold
    F = np.where(supp, S, 0.0)
    return A, S, supp, F


def mc_total_loss(G, target, head: McHead, classifier: ClassifierHead, sparsity_weight,
                  use_logits=True, logits_abs=False) -> LossBreakdown:
    """Batch-mean mask-head objective over (m, n) features and target class(es)."""
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] == 0:
        raise ValidationError("batch must be a non-empty (m, n) matrix")
    if sparsity_weight < 0:
        raise ValidationError("sparsity weight must be >= 0")
    m = G.shape[0]
    targets = _as_targets(target, m)
    _, _, _, F = _mc_forward_pieces(G, head)
    P = _batch_probs(G * F, classifier)
    ce = _mean_ce(P, targets)
    l1 = float(F.sum(axis=1).mean())
    w = classifier.weights.astype(np.float64)[:, targets].T  # (m, n)
    if logits_abs:
        w = np.abs(w)
    lg = float((F * G * w).sum(axis=1).mean()) if use_logits else 0.0
    total = ce + sparsity_weight * l1 - lg
    return LossBreakdown(ce=ce, l1=l1, logits_term=lg, total=total)


def grad_mc(G, target, head: McHead, classifier: ClassifierHead, sparsity_weight,
            use_logits=True, logits_abs=False):
    """Analytic gradient of mc_total_loss w.r.t. the head's weight and bias.

    The thresholded ReLU uses subgradient 1 on its support and 0 below it.
    Returns (grads, LossBreakdown) with grads keyed "weight" / "bias".
    """
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] == 0:
        raise ValidationError("batch must be a non-empty (m, n) matrix")
    m = G.shape[0]
    targets = _as_targets(target, m)
    _, S, supp, F = _mc_forward_pieces(G, head)
    W = classifier.weights.astype(np.float64)
    P = _batch_probs(G * F, classifier)
    ce = _mean_ce(P, targets)
    l1 = float(F.sum(axis=1).mean())
    wc = W[:, targets].T  # (m, n)
    if logits_abs:
        wc = np.abs(wc)
    lg = float((F * G * wc).sum(axis=1).mean()) if use_logits else 0.0

    dZ = P.copy()
    dZ[np.arange(m), targets] -= 1.0
    dZ /= m
    dF = G * (dZ @ W.T) + sparsity_weight / m
    if use_logits:
        dF -= G * wc / m
    dA = np.where(supp, dF, 0.0) * S * (1.0 - S)
    grads = {"weight": dA.T @ G, "bias": dA.sum(axis=0)}
    breakdown = LossBreakdown(ce=ce, l1=l1, logits_term=lg,
                              total=ce + sparsity_weight * l1 - lg)
    return grads, breakdown


def _mi_forward_pieces(G, head):
    A = G @ head.weight.astype(np.float64).T + head.bias.astype(np.float64)
    F = np.maximum(A, 0.0)
    return A, F


def mi_total_loss(G, target, head: MiHead, classifier: ClassifierHead,
                  sparsity_weight) -> LossBreakdown:
    """Batch-mean addition-head objective toward the alter class(es)."""
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] == 0:
        raise ValidationError("batch must be a non-empty (m, n) matrix")
    if sparsity_weight < 0:
        raise ValidationError("sparsity weight must be >= 0")
    m = G.shape[0]
    targets = _as_targets(target, m)
    _, F = _mi_forward_pieces(G, head)
    P = _batch_probs(G + F, classifier)
    ce = _mean_ce(P, targets)
    l1 = float(F.sum(axis=1).mean())
    return LossBreakdown(ce=ce, l1=l1, logits_term=0.0, total=ce + sparsity_weight * l1)


def grad_mi(G, target, head: MiHead, classifier: ClassifierHead, sparsity_weight):
    """Analytic gradient of mi_total_loss; ReLU subgradient is 0 at and below 0."""
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] == 0:
        raise ValidationError("batch must be a non-empty (m, n) matrix")
    m = G.shape[0]
    targets = _as_targets(target, m)
    A, F = _mi_forward_pieces(G, head)
    W = classifier.weights.astype(np.float64)
    P = _batch_probs(G + F, classifier)
    ce = _mean_ce(P, targets)
    l1 = float(F.sum(axis=1).mean())

    dZ = P.copy()
    dZ[np.arange(m), targets] -= 1.0
    dZ /= m
    dF = dZ @ W.T + sparsity_weight / m
    dA = np.where(A > 0, dF, 0.0)
    grads = {"weight": dA.T @ G, "bias": dA.sum(axis=0)}
    breakdown = LossBreakdown(ce=ce, l1=l1, logits_term=0.0,
                              total=ce + sparsity_weight * l1)
    return grads, breakdown


def mc_kink_units(head: McHead, G, band=1e-3):
    """Units whose sigmoid output sits within ``band`` of the threshold for
    any sample; their parameters are excluded from finite-difference checks."""
    S = mc_sigmoid(head, np.asarray(G, dtype=np.float64))
    return np.any(np.abs(S - head.threshold) <= band, axis=0)


def mi_kink_units(head: MiHead, G, band=1e-3):
    """Units whose ReLU pre-activation sits within ``band`` of zero."""
    G = np.asarray(G, dtype=np.float64)
    A = G @ head.weight.astype(np.float64).T + head.bias.astype(np.float64)
    return np.any(np.abs(A) <= band, axis=0)


def unit_exclusion_masks(units, n):
    """Expand a per-unit kink flag to weight/bias exclusion masks."""
    units = np.asarray(units, dtype=bool)
    return {"weight": np.repeat(units[:, None], n, axis=1), "bias": units.copy()}


def finite_diff_check(loss_fn, params, analytic_grads, step=1e-4, exclude=None):
    """Worst relative error between central differences and analytic gradients.

    ``loss_fn`` is a zero-argument callable reading ``params``; the arrays in
    ``params`` are perturbed in place (float64) and restored.  ``exclude``
    maps parameter names to boolean masks of entries to skip (non-smooth
    bands).
    """
    if step <= 0:
        raise ValidationError("finite-difference step must be positive")
    worst = 0.0
    for name, arr in params.items():
        if arr.dtype != np.float64:
            raise ValidationError(f"parameter {name!r} must be float64 for the check")
        grad = np.asarray(analytic_grads[name], dtype=np.float64)
        skip = exclude.get(name) if exclude else None
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            if skip is not None and skip[idx]:
                continue
            orig = arr[idx]
            arr[idx] = orig + step
            fplus = loss_fn()
            arr[idx] = orig - step
            fminus = loss_fn()
            arr[idx] = orig
            fd = (fplus - fminus) / (2.0 * step)
            denom = max(abs(fd), abs(grad[idx]), 1e-8)
            worst = max(worst, abs(fd - grad[idx]) / denom)
    return worst
