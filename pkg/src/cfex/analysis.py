"""Dataset-level quantitative studies: filter statistics, disable-filter
ablations, sparsity sweeps, logits-term ablations and misclassification
reports.  Tables are emitted as JSON and as aligned plain text."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ValidationError
from .formats import ClassifierHead, FeatureBundle
from .heads import McHead, mc_forward_infer, mc_forward_train
from .losses import logits_contribution
from .explain import ExplanationReport, explain_mc, explain_mi, top_activating_images, topk_filters
from .model import batch_top_class
from .train import TrainConfig, train_mc


@dataclass
class FilterStats:
    class_index: int
    image_count: int
    counts: np.ndarray  # (n,) how often each filter appears in a mask
    magnitudes: np.ndarray  # (n,) mean activation where active, / max such mean

    def to_json(self):
        return {
            "class_index": self.class_index,
            "image_count": self.image_count,
            "counts": [int(c) for c in self.counts],
            "magnitudes": [float(v) for v in self.magnitudes],
        }


@dataclass
class AblationResult:
    class_index: int
    disabled: list[int]
    recall_before: float
    recall_after: float
    recall_random: float
    accuracy_before: float
    accuracy_after: float
    accuracy_random: float
    baseline_seed: int

    def to_json(self):
        return {
            "class_index": self.class_index,
            "disabled": list(self.disabled),
            "recall_before": self.recall_before,
            "recall_after": self.recall_after,
            "recall_random": self.recall_random,
            "accuracy_before": self.accuracy_before,
            "accuracy_after": self.accuracy_after,
            "accuracy_random": self.accuracy_random,
            "baseline_seed": self.baseline_seed,
        }


def _class_member_indices(bundle, class_index, eval_indices=None):
    pool = range(len(bundle.images)) if eval_indices is None else eval_indices
    members = [i for i in pool if bundle.images[i].true_label == class_index]
    if not members:
        raise ValidationError(f"no evaluation images of class {class_index}")
    return members


def global_filter_stats(bundle: FeatureBundle, classifier: ClassifierHead,
                        mc_head: McHead, class_index, eval_indices=None) -> FilterStats:
    """Accumulate binarized masks over a class's evaluation images.

    Magnitudes are the per-filter mean activation over the images where the
    filter was kept, normalized by the largest such mean.
    """
    members = _class_member_indices(bundle, class_index, eval_indices)
    G = bundle.feature_matrix()[members]
    masks = mc_forward_infer(mc_head, G)
    counts = masks.sum(axis=0)
    sums = (masks * G).sum(axis=0)
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    peak = means.max()
    magnitudes = means / peak if peak > 0 else means
    return FilterStats(class_index=int(class_index), image_count=len(members),
                       counts=counts.astype(np.int64), magnitudes=magnitudes)


def global_mc_set(stats: FilterStats, min_count=1):
    """Filters kept for at least ``min_count`` images (union at the default)."""
    if min_count < 1:
        raise ValidationError("min_count must be >= 1")
    return [int(k) for k in np.flatnonzero(stats.counts >= min_count)]


def disable_filters_eval(bundle: FeatureBundle, classifier: ClassifierHead,
                         disabled, class_index, baseline_seed=0,
                         eval_indices=None) -> AblationResult:
    """Recall/accuracy before and after disabling a filter set, plus a seeded
    random baseline of the same cardinality."""
    disabled = sorted(int(k) for k in disabled)
    if any(k < 0 or k >= bundle.n for k in disabled):
        raise ValidationError("disabled set contains out-of-range filter indices")
    pool = list(range(len(bundle.images))) if eval_indices is None else list(eval_indices)
    G = bundle.feature_matrix()[pool]
    y = bundle.true_labels()[pool]
    members = y == class_index
    if not np.any(members):
        raise ValidationError(f"no evaluation images of class {class_index}")

    def metrics(disabled_set):
        mask = np.ones(bundle.n)
        mask[list(disabled_set)] = 0.0
        pred = batch_top_class(G * mask, classifier)
        recall = float(np.mean(pred[members] == class_index))
        accuracy = float(np.mean(pred == y))
        return recall, accuracy

    recall_before, accuracy_before = metrics([])
    recall_after, accuracy_after = metrics(disabled)
    rng = np.random.default_rng(baseline_seed)
    random_set = rng.choice(bundle.n, size=len(disabled), replace=False) if disabled else []
    recall_random, accuracy_random = metrics(random_set)
    return AblationResult(
        class_index=int(class_index), disabled=disabled,
        recall_before=recall_before, recall_after=recall_after,
        recall_random=recall_random, accuracy_before=accuracy_before,
        accuracy_after=accuracy_after, accuracy_random=accuracy_random,
        baseline_seed=baseline_seed,
    )


@dataclass
class SweepRow:
    sparsity_weight: float
    accuracy: float
    ce: float
    l1: float
    mean_filters: float

    def to_json(self):
        return {"sparsity_weight": self.sparsity_weight, "accuracy": self.accuracy,
                "ce": self.ce, "l1": self.l1, "mean_filters": self.mean_filters}


def _evaluate_mc(head, bundle, classifier, target, indices):
    from .losses import mc_total_loss  # local to avoid a cycle at import time

    G = bundle.feature_matrix()[indices]
    masks = mc_forward_infer(head, G)
    pred = batch_top_class(G * masks, classifier)
    bd = mc_total_loss(G, target, head, classifier, 0.0, use_logits=False)
    return {
        "accuracy": float(np.mean(pred == target)),
        "ce": bd.ce,
        "l1": bd.l1,
        "mean_filters": float(masks.sum(axis=1).mean()),
    }


def sparsity_sweep(bundle: FeatureBundle, classifier: ClassifierHead, target_class,
                   sparsity_weights, config: TrainConfig, test_bundle=None):
    """One full mask-head training per sparsity weight, shared seed.

    Returns {"train": [SweepRow...], "test": [SweepRow...] or None}.
    """
    if not sparsity_weights:
        raise ValidationError("sparsity weight list must be non-empty")
    train_rows, test_rows = [], []
    for lam in sparsity_weights:
        head, report = train_mc(bundle, classifier, target_class,
                                replace(config, sparsity_weight=float(lam)))
        final = report.epoch_losses[-1]
        train_rows.append(SweepRow(
            sparsity_weight=float(lam), accuracy=report.final_accuracy,
            ce=final.ce, l1=final.l1, mean_filters=report.final_sparsity))
        if test_bundle is not None:
            from .train import POLICY_INFERRED_EQUALS_TARGET, select_subset

            idx = select_subset(test_bundle, config.subset_policy or
                                POLICY_INFERRED_EQUALS_TARGET, target_class,
                                config.source_class)
            ev = _evaluate_mc(head, test_bundle, classifier, target_class, idx)
            test_rows.append(SweepRow(sparsity_weight=float(lam), **ev))
    return {"train": train_rows, "test": test_rows if test_bundle is not None else None}


@dataclass
class LogitsAblationRow:
    with_logits: bool
    accuracy: float
    ce: float
    l1: float
    logits_value: float  # mean per-image retained-logit contribution
    mean_filters: float

    def to_json(self):
        return {"with_logits": self.with_logits, "accuracy": self.accuracy,
                "ce": self.ce, "l1": self.l1, "logits_value": self.logits_value,
                "mean_filters": self.mean_filters}


def logits_ablation(bundle: FeatureBundle, classifier: ClassifierHead, target_class,
                    config: TrainConfig):
    """Two mask-head runs differing only in the logits-term switch."""
    from .train import POLICY_INFERRED_EQUALS_TARGET, select_subset

    idx = select_subset(bundle, config.subset_policy or POLICY_INFERRED_EQUALS_TARGET,
                        target_class, config.source_class)
    G = bundle.feature_matrix()[idx]
    rows = []
    for with_logits in (True, False):
        head, report = train_mc(bundle, classifier, target_class,
                                replace(config, use_logits=with_logits))
        soft = mc_forward_train(head, G)
        contribs = [logits_contribution(soft[i], G[i], classifier, target_class)
                    for i in range(len(G))]
        final = report.epoch_losses[-1]
        rows.append(LogitsAblationRow(
            with_logits=with_logits, accuracy=report.final_accuracy, ce=final.ce,
            l1=final.l1, logits_value=float(np.mean(contribs)),
            mean_filters=report.final_sparsity))
    return rows


@dataclass
class MisclassificationReport:
    image_index: int
    true_label: int
    inferred_label: int
    mc_report: ExplanationReport  # w.r.t. the wrong inferred class
    top_filter_examples: dict[int, list[int]]  # filter -> top-activating images
    mi_report: ExplanationReport  # toward the true class

    def to_json(self):
        return {
            "image_index": self.image_index,
            "true_label": self.true_label,
            "inferred_label": self.inferred_label,
            "mc": self.mc_report.to_json(),
            "top_filter_examples": {str(k): v for k, v in self.top_filter_examples.items()},
            "mi": self.mi_report.to_json(),
        }


def misclassification_report(image_index, bundle: FeatureBundle,
                             classifier: ClassifierHead, mc_head_for_inferred,
                             mi_head_for_true, top_k=3) -> MisclassificationReport:
    """Why was this image misclassified: the wrong class's retained filters plus
    the additions that recover the true class."""
    rec = bundle.images[image_index]
    if rec.inferred_label == rec.true_label:
        raise ValidationError(
            f"image {image_index} is correctly classified; not a misclassification")
    mc_report = explain_mc(image_index, bundle, classifier, mc_head_for_inferred)
    examples = {}
    for k in topk_filters(mc_report, top_k) if mc_report.active_filters else []:
        try:
            examples[k] = top_activating_images(bundle, k, rec.inferred_label, top_k)
        except ValidationError:
            examples[k] = []  # inferred class may be absent as a true label
    mi_report = explain_mi(image_index, bundle, classifier, mi_head_for_true,
                           rec.true_label)
    return MisclassificationReport(
        image_index=image_index, true_label=rec.true_label,
        inferred_label=rec.inferred_label, mc_report=mc_report,
        top_filter_examples=examples, mi_report=mi_report,
    )


def render_table(headers, rows):
    """Aligned plain-text table. ``rows`` are sequences of stringifiable cells."""
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = []
    for j, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
