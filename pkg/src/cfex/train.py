"""Training loops for the explainer heads, a stand-in classifier trainer,
and the synthetic dataset generator used for desk-scale experiments.

Both explainer loops follow the same recipe: freeze the bundle and the
classifier, update only the explainer dense layer with mini-batch SGD +
classical momentum, shuffle each epoch from a (seed, epoch)-derived stream
so runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DivergenceError, EmptySelectionError, ValidationError
from .formats import ClassifierHead, FeatureBundle, ImageRecord
from .heads import DEFAULT_THRESHOLD, McHead, MiHead, mc_forward_infer, mi_forward
from .losses import LossBreakdown, grad_mc, grad_mi
from .model import batch_top_class

POLICY_ALL = "all"
POLICY_INFERRED_EQUALS_TARGET = "inferred-equals-target"
POLICY_INFERRED_NOT_TARGET = "inferred-not-target"
POLICY_INFERRED_EQUALS_SOURCE = "inferred-equals-source"
POLICIES = (POLICY_ALL, POLICY_INFERRED_EQUALS_TARGET, POLICY_INFERRED_NOT_TARGET,
            POLICY_INFERRED_EQUALS_SOURCE)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 200
    sparsity_weight: float | None = None  # default resolves to 2 (MC) / 1 (MI)
    seed: int = 0
    subset_policy: str | None = None  # default resolves per head kind
    source_class: int | None = None  # for inferred-equals-source
    threshold: float = DEFAULT_THRESHOLD
    use_logits: bool = True
    logits_abs: bool = False

    def validate(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning rate must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise ValidationError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch size and epochs must be >= 1")
        if self.sparsity_weight is not None and self.sparsity_weight < 0:
            raise ValidationError("sparsity weight must be >= 0")
        if self.subset_policy is not None and self.subset_policy not in POLICIES:
            raise ValidationError(f"unknown subset policy {self.subset_policy!r}")
        return self


@dataclass
class TrainReport:
    kind: str  # "mc", "mi" or "classifier"
    target_class: int
    sparsity_weight: float
    epoch_losses: list[LossBreakdown] = field(default_factory=list)
    final_accuracy: float = 0.0  # modified predictions hitting the target
    final_sparsity: float = 0.0  # mean mask cardinality (MC) / mean addition l1 (MI)
    subset_size: int = 0

    def to_json(self):
        return {
            "kind": self.kind,
            "target_class": self.target_class,
            "sparsity_weight": self.sparsity_weight,
            "epochs": {
                "ce": [e.ce for e in self.epoch_losses],
                "l1": [e.l1 for e in self.epoch_losses],
                "logits_term": [e.logits_term for e in self.epoch_losses],
                "total": [e.total for e in self.epoch_losses],
            },
            "final_accuracy": self.final_accuracy,
            "final_sparsity": self.final_sparsity,
            "subset_size": self.subset_size,
        }


def select_subset(bundle: FeatureBundle, policy, target, source_class=None):
    """Deterministic, order-preserving image index list for a training policy."""
    inferred = bundle.inferred_labels()
    if policy == POLICY_ALL:
        idx = np.arange(len(bundle.images))
    elif policy == POLICY_INFERRED_EQUALS_TARGET:
        idx = np.flatnonzero(inferred == target)
    elif policy == POLICY_INFERRED_NOT_TARGET:
        idx = np.flatnonzero(inferred != target)
    elif policy == POLICY_INFERRED_EQUALS_SOURCE:
        if source_class is None:
            raise ValidationError("inferred-equals-source policy needs a source class")
        idx = np.flatnonzero(inferred == source_class)
    else:
        raise ValidationError(f"unknown subset policy {policy!r}")
    if len(idx) == 0:
        raise EmptySelectionError(
            f"policy {policy!r} selected no images for target class {target}")
    return [int(i) for i in idx]


def sgd_momentum_step(params, grads, velocity, learning_rate, momentum):
    """Classical momentum: v <- mu*v - lr*grad; theta <- theta + v. In place."""
    for name in params:
        v = velocity[name]
        v *= momentum
        v -= learning_rate * grads[name]
        params[name] += v
    return params, velocity


def _epoch_permutation(seed, epoch, count):
    return np.random.default_rng([seed, epoch]).permutation(count)


def _init_dense(n, seed):
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(n)
    weight = rng.uniform(-scale, scale, size=(n, n))
    return {"weight": weight, "bias": np.zeros(n)}


def _run_epochs(G, config, grad_fn, params):
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    m = G.shape[0]
    losses = []
    for epoch in range(config.epochs):
        perm = _epoch_permutation(config.seed, epoch, m)
        sums = np.zeros(4)
        for start in range(0, m, config.batch_size):
            batch = perm[start : start + config.batch_size]
            grads, bd = grad_fn(G[batch], params)
            if not np.isfinite(bd.total):
                raise DivergenceError(
                    f"non-finite loss {bd.total} at epoch {epoch}, batch {start // config.batch_size}",
                    epoch=epoch, batch=start // config.batch_size)
            sums += len(batch) * np.array([bd.ce, bd.l1, bd.logits_term, bd.total])
            sgd_momentum_step(params, grads, velocity, config.learning_rate, config.momentum)
        ce, l1, lg, total = sums / m
        losses.append(LossBreakdown(ce=ce, l1=l1, logits_term=lg, total=total))
    return losses


def train_mc(bundle: FeatureBundle, classifier: ClassifierHead, target_class,
             config: TrainConfig):
    """Train a mask head for one target class. Returns (McHead, TrainReport)."""
    config.validate()
    policy = config.subset_policy or POLICY_INFERRED_EQUALS_TARGET
    lam = 2.0 if config.sparsity_weight is None else config.sparsity_weight
    subset = select_subset(bundle, policy, target_class, config.source_class)
    G = bundle.feature_matrix()[subset]
    params = _init_dense(bundle.n, config.seed)
    head = McHead(weight=params["weight"], bias=params["bias"], threshold=config.threshold)

    def grad_fn(Gb, p):
        return grad_mc(Gb, target_class, head, classifier, lam,
                       use_logits=config.use_logits, logits_abs=config.logits_abs)

    losses = _run_epochs(G, config, grad_fn, params)

    masks = mc_forward_infer(head, G)
    kept = batch_top_class(G * masks, classifier)
    report = TrainReport(
        kind="mc", target_class=int(target_class), sparsity_weight=lam,
        epoch_losses=losses,
        final_accuracy=float(np.mean(kept == target_class)),
        final_sparsity=float(masks.sum(axis=1).mean()),
        subset_size=len(subset),
    )
    final = McHead(weight=params["weight"].astype(np.float32),
                   bias=params["bias"].astype(np.float32), threshold=config.threshold)
    return final, report


def train_mi(bundle: FeatureBundle, classifier: ClassifierHead, alter_class,
             config: TrainConfig):
    """Train an addition head toward one alter class. Returns (MiHead, TrainReport)."""
    config.validate()
    policy = config.subset_policy or POLICY_INFERRED_NOT_TARGET
    lam = 1.0 if config.sparsity_weight is None else config.sparsity_weight
    subset = select_subset(bundle, policy, alter_class, config.source_class)
    G = bundle.feature_matrix()[subset]
    params = _init_dense(bundle.n, config.seed)
    head = MiHead(weight=params["weight"], bias=params["bias"])

    def grad_fn(Gb, p):
        return grad_mi(Gb, alter_class, head, classifier, lam)

    losses = _run_epochs(G, config, grad_fn, params)

    additions = mi_forward(head, G)
    flipped = batch_top_class(G + additions, classifier)
    report = TrainReport(
        kind="mi", target_class=int(alter_class), sparsity_weight=lam,
        epoch_losses=losses,
        final_accuracy=float(np.mean(flipped == alter_class)),
        final_sparsity=float(additions.sum(axis=1).mean()),
        subset_size=len(subset),
    )
    final = MiHead(weight=params["weight"].astype(np.float32),
                   bias=params["bias"].astype(np.float32))
    return final, report


def train_classifier_head(bundle: FeatureBundle, num_classes, config: TrainConfig):
    """Multinomial logistic regression on (g, true_label) with the same SGD core.

    Desk-scale stand-in for a pre-trained dense softmax head.
    """
    config.validate()
    G = bundle.feature_matrix()
    y = bundle.true_labels()
    m, n = G.shape
    if m == 0:
        raise ValidationError("cannot train a classifier head on an empty bundle")
    params = {"weight": np.zeros((n, num_classes)), "bias": np.zeros(num_classes)}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    for epoch in range(config.epochs):
        perm = _epoch_permutation(config.seed, epoch, m)
        for start in range(0, m, config.batch_size):
            batch = perm[start : start + config.batch_size]
            Gb, yb = G[batch], y[batch]
            Z = Gb @ params["weight"] + params["bias"]
            Z -= Z.max(axis=1, keepdims=True)
            P = np.exp(Z)
            P /= P.sum(axis=1, keepdims=True)
            dZ = P
            dZ[np.arange(len(yb)), yb] -= 1.0
            dZ /= len(yb)
            if not np.all(np.isfinite(dZ)):
                raise DivergenceError(f"non-finite classifier gradient at epoch {epoch}",
                                      epoch=epoch)
            grads = {"weight": Gb.T @ dZ, "bias": dZ.sum(axis=0)}
            sgd_momentum_step(params, grads, velocity, config.learning_rate, config.momentum)
    return ClassifierHead(weights=params["weight"].astype(np.float32),
                          bias=params["bias"].astype(np.float32)).validate()


DEFAULT_SEPARATION = 0.5
DEFAULT_HEAD_CONFIG = TrainConfig(learning_rate=2.0, epochs=1000)


def synth_dataset(n, num_classes, per_class, separation=DEFAULT_SEPARATION, seed=0,
                  head: ClassifierHead | None = None, noise=None,
                  spatial_shape=None):
    """Separable synthetic feature bundle with sparse per-class prototypes.

    Each class owns a disjoint block of roughly n // num_classes filters; its
    prototype puts mass ``separation``-scaled values there and samples are
    ReLU-clipped noisy copies.  Inferred labels come from ``head`` or from a
    freshly trained stand-in classifier.  Fixed seed => bit-identical bundle.
    """
    if n < num_classes or num_classes < 2 or per_class < 1:
        raise ValidationError("need n >= num_classes >= 2 and per_class >= 1")
    if separation <= 0:
        raise ValidationError("separation must be positive")
    if noise is None:
        noise = separation / 4.0  # keep the signal-to-noise ratio scale-free
    rng = np.random.default_rng(seed)
    block = max(1, n // num_classes)
    prototypes = np.zeros((num_classes, n))
    for c in range(num_classes):
        support = np.arange(c * block, min((c + 1) * block, n))
        prototypes[c, support] = separation * rng.uniform(0.5, 1.5, size=len(support))

    records = []
    for c in range(num_classes):
        samples = np.maximum(
            0.0, prototypes[c] + noise * rng.standard_normal((per_class, n)))
        for j in range(per_class):
            g32 = samples[j].astype(np.float32)
            spatial = None
            if spatial_shape is not None:
                hs, ws = spatial_shape
                raw = rng.uniform(0.1, 1.0, size=(hs, ws, n))
                # rescale per channel so the spatial mean reproduces g exactly
                scale = np.where(g32 > 0, g32 / raw.mean(axis=(0, 1)), 0.0)
                spatial = (raw * scale).astype(np.float32)
                g32 = spatial.astype(np.float64).mean(axis=(0, 1)).astype(np.float32)
            records.append(ImageRecord(
                true_label=c, inferred_label=0, g=g32,
                source_path=f"synth/class{c:03d}/img{j:05d}.png", spatial=spatial))

    bundle = FeatureBundle(n=n, num_classes=num_classes, images=records)
    if head is None:
        head = train_classifier_head(bundle, num_classes,
                                     replace(DEFAULT_HEAD_CONFIG, seed=seed + 1))
    inferred = batch_top_class(bundle.feature_matrix(), head)
    for rec, c in zip(bundle.images, inferred):
        rec.inferred_label = int(c)
    return bundle.validate(), head
