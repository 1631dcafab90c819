"""Forward semantics of the two explainer heads.

The mask head squashes a dense layer through a sigmoid and a thresholded
ReLU, so training sees a soft mask with values in {0} U [t, 1) while
inference fully binarizes it.  The addition head is a plain dense+ReLU
producing non-negative per-filter increments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .formats import KIND_MC, KIND_MI, ExplainerCheckpoint

DEFAULT_THRESHOLD = 0.5


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class McHead:
    weight: np.ndarray  # (n, n), row = output unit
    bias: np.ndarray  # (n,)
    threshold: float = DEFAULT_THRESHOLD

    @property
    def n(self):
        return self.weight.shape[0]

    def validate(self):
        if not (0.0 < self.threshold < 1.0):
            raise ValidationError(f"threshold {self.threshold} outside (0, 1)")
        if self.weight.shape != (self.n, self.n) or self.bias.shape != (self.n,):
            raise ValidationError("mask head weight/bias shapes inconsistent")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValidationError("mask head has non-finite weights")
        return self


@dataclass
class MiHead:
    weight: np.ndarray  # (n, n)
    bias: np.ndarray  # (n,)

    @property
    def n(self):
        return self.weight.shape[0]

    def validate(self):
        if self.weight.shape != (self.n, self.n) or self.bias.shape != (self.n,):
            raise ValidationError("addition head weight/bias shapes inconsistent")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValidationError("addition head has non-finite weights")
        return self


def _pre_activation(head, g):
    g = np.asarray(g, dtype=np.float64)
    if g.shape[-1] != head.n:
        raise ValidationError(f"feature length {g.shape[-1]} != head n {head.n}")
    return g @ head.weight.astype(np.float64).T + head.bias.astype(np.float64)


def mc_sigmoid(head: McHead, g):
    """Sigmoid of the dense layer, before thresholding. Works on batches."""
    return _sigmoid(_pre_activation(head, g))


def mc_forward_train(head: McHead, g):
    """Soft mask: sigmoid output where it clears the threshold, zero below.

    The threshold comparison is inclusive, so the zero-weight head (sigmoid
    pinned at 0.5) keeps every unit at the default threshold.
    """
    s = mc_sigmoid(head, g)
    return np.where(s >= head.threshold, s, 0.0)


def mc_forward_infer(head: McHead, g):
    """Fully binarized mask: 1 where the sigmoid clears the threshold."""
    s = mc_sigmoid(head, g)
    return (s >= head.threshold).astype(np.float64)


def mi_forward(head: MiHead, g):
    """Non-negative addition vector: ReLU of the dense layer."""
    return np.maximum(_pre_activation(head, g), 0.0)


def checkpoint_from_mc(head: McHead, target_class, sparsity_weight, epochs_trained):
    return ExplainerCheckpoint(
        kind=KIND_MC, n=head.n, target_class=int(target_class),
        threshold=float(head.threshold), sparsity_weight=float(sparsity_weight),
        epochs_trained=int(epochs_trained),
        weight=np.asarray(head.weight, dtype=np.float32),
        bias=np.asarray(head.bias, dtype=np.float32),
    )


def checkpoint_from_mi(head: MiHead, target_class, sparsity_weight, epochs_trained):
    return ExplainerCheckpoint(
        kind=KIND_MI, n=head.n, target_class=int(target_class), threshold=0.0,
        sparsity_weight=float(sparsity_weight), epochs_trained=int(epochs_trained),
        weight=np.asarray(head.weight, dtype=np.float32),
        bias=np.asarray(head.bias, dtype=np.float32),
    )


def mc_from_checkpoint(ckpt: ExplainerCheckpoint) -> McHead:
    if ckpt.kind != KIND_MC:
        raise ValidationError(f"expected an MC checkpoint, got kind {ckpt.kind!r}")
    return McHead(weight=ckpt.weight, bias=ckpt.bias, threshold=ckpt.threshold).validate()


def mi_from_checkpoint(ckpt: ExplainerCheckpoint) -> MiHead:
    if ckpt.kind != KIND_MI:
        raise ValidationError(f"expected an MI checkpoint, got kind {ckpt.kind!r}")
    return MiHead(weight=ckpt.weight, bias=ckpt.bias).validate()
