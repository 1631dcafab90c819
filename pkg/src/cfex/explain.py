"""Per-image explanation generation.

Contrastive reports list the retained filters and the masked prediction;
counterfactual reports list the added amounts and the flipped prediction.
Heatmaps are bilinear upsamplings of a filter's spatial activation map,
min-max normalized, emitted as JSON matrices or 8-bit PGM.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .formats import (KIND_MC, KIND_MI, ClassifierHead, ExplainerCheckpoint,
                      FeatureBundle)
from .heads import (McHead, MiHead, mc_forward_infer, mc_from_checkpoint,
                    mi_forward, mi_from_checkpoint)
from .model import additive_classify, classify, masked_classify


@dataclass
class ExplanationReport:
    kind: str  # "mc" or "mi"
    image_index: int
    source_path: str
    inferred_class: int
    inferred_prob: float
    target_class: int | None
    active_filters: list[int]  # sorted by descending magnitude, ties to lower index
    magnitudes: list[float]  # g_k for MC, addition amount for MI
    modified_class: int
    modified_prob: float  # probability of the relevant class after modification
    mask: np.ndarray | None = None  # binary, MC only
    addition: np.ndarray | None = None  # MI only

    def to_json(self):
        out = {
            "kind": self.kind,
            "image_index": self.image_index,
            "source_path": self.source_path,
            "inferred_class": self.inferred_class,
            "inferred_prob": self.inferred_prob,
            "target_class": self.target_class,
            "active_filters": list(self.active_filters),
            "magnitudes": list(self.magnitudes),
            "modified_class": self.modified_class,
            "modified_prob": self.modified_prob,
        }
        if self.mask is not None:
            out["mask"] = [int(v) for v in self.mask]
        if self.addition is not None:
            out["addition"] = [float(v) for v in self.addition]
        return out


@dataclass
class Heatmap:
    values: np.ndarray  # (target_h, target_w) in [0, 1]
    filter_index: int
    source_path: str

    def to_json(self):
        return {
            "filter_index": self.filter_index,
            "source_path": self.source_path,
            "values": self.values.tolist(),
        }


def _record(bundle, image_index):
    if not (0 <= image_index < len(bundle.images)):
        raise ValidationError(f"image index {image_index} out of range "
                              f"(bundle has {len(bundle.images)} images)")
    return bundle.images[image_index]


def _ranked(indices, magnitudes):
    """Descending by magnitude, ties to the lower filter index."""
    order = sorted(range(len(indices)), key=lambda i: (-magnitudes[i], indices[i]))
    return [indices[i] for i in order], [magnitudes[i] for i in order]


def explain_mc(image_index, bundle: FeatureBundle, classifier: ClassifierHead,
               mc_head) -> ExplanationReport:
    """Contrastive report: which filters alone keep the inferred class."""
    if isinstance(mc_head, ExplainerCheckpoint):
        mc_head = mc_from_checkpoint(mc_head)
    if not isinstance(mc_head, McHead):
        raise ValidationError(f"expected an MC head, got {type(mc_head).__name__}")
    rec = _record(bundle, image_index)
    g = rec.g.astype(np.float64)
    base = classify(g, classifier)
    mask = mc_forward_infer(mc_head, g)
    masked = masked_classify(g, mask, classifier)
    active = [int(k) for k in np.flatnonzero(mask)]
    indices, mags = _ranked(active, [float(g[k]) for k in active])
    return ExplanationReport(
        kind=KIND_MC, image_index=image_index, source_path=rec.source_path,
        inferred_class=base.top_class, inferred_prob=float(base.probs[base.top_class]),
        target_class=None, active_filters=indices, magnitudes=mags,
        modified_class=masked.top_class,
        modified_prob=float(masked.probs[base.top_class]),
        mask=mask,
    )


def explain_mi(image_index, bundle: FeatureBundle, classifier: ClassifierHead,
               mi_head, alter_class) -> ExplanationReport:
    """Counterfactual report: which added amounts flip to the alter class."""
    if isinstance(mi_head, ExplainerCheckpoint):
        mi_head = mi_from_checkpoint(mi_head)
    if not isinstance(mi_head, MiHead):
        raise ValidationError(f"expected an MI head, got {type(mi_head).__name__}")
    if not (0 <= alter_class < classifier.num_classes):
        raise ValidationError(f"alter class {alter_class} out of range")
    rec = _record(bundle, image_index)
    g = rec.g.astype(np.float64)
    base = classify(g, classifier)
    addition = mi_forward(mi_head, g)
    modified = additive_classify(g, addition, classifier)
    active = [int(k) for k in np.flatnonzero(addition > 0)]
    indices, mags = _ranked(active, [float(addition[k]) for k in active])
    return ExplanationReport(
        kind=KIND_MI, image_index=image_index, source_path=rec.source_path,
        inferred_class=base.top_class, inferred_prob=float(base.probs[base.top_class]),
        target_class=int(alter_class), active_filters=indices, magnitudes=mags,
        modified_class=modified.top_class,
        modified_prob=float(modified.probs[alter_class]),
        addition=addition,
    )


def topk_filters(report: ExplanationReport, k):
    """First k active filters by descending magnitude; all of them if k exceeds
    the active count."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    return list(report.active_filters[:k])


def _bilinear_resample(slice2d, target_h, target_w):
    hs, ws = slice2d.shape

    def coords(src, dst):
        if dst == 1:
            return np.array([(src - 1) / 2.0])
        return np.arange(dst) * (src - 1) / (dst - 1)

    ys, xs = coords(hs, target_h), coords(ws, target_w)
    y0 = np.clip(np.floor(ys).astype(int), 0, hs - 1)
    y1 = np.clip(y0 + 1, 0, hs - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, ws - 1)
    x1 = np.clip(x0 + 1, 0, ws - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = slice2d[np.ix_(y0, x0)] * (1 - wx) + slice2d[np.ix_(y0, x1)] * wx
    bot = slice2d[np.ix_(y1, x0)] * (1 - wx) + slice2d[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def rf_heatmap(image_index, bundle: FeatureBundle, filter_index, target_h,
               target_w) -> Heatmap:
    """Upsampled-activation heatmap for one filter of one image.

    Constant spatial slices normalize to all zeros rather than dividing by
    zero.
    """
    rec = _record(bundle, image_index)
    if rec.spatial is None:
        raise ValidationError(
            "bundle has no spatial maps; re-export with spatial data to draw heatmaps")
    if not (0 <= filter_index < bundle.n):
        raise ValidationError(f"filter index {filter_index} out of range")
    if target_h < 1 or target_w < 1:
        raise ValidationError("target size must be >= 1x1")
    slice2d = rec.spatial[:, :, filter_index].astype(np.float64)
    resampled = _bilinear_resample(slice2d, target_h, target_w)
    lo, hi = resampled.min(), resampled.max()
    if hi - lo <= 0:
        values = np.zeros_like(resampled)
    else:
        values = (resampled - lo) / (hi - lo)
    return Heatmap(values=values, filter_index=int(filter_index),
                   source_path=rec.source_path)


def write_pgm(heatmap: Heatmap, path):
    """8-bit binary PGM (P5, maxval 255, row-major)."""
    values = np.clip(np.rint(heatmap.values * 255), 0, 255).astype(np.uint8)
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(values.tobytes())


def top_activating_images(bundle: FeatureBundle, filter_index, class_index, k):
    """The k images of a true-label class with the largest activation on one
    filter, descending, ties to the lower image index. Returns index list."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    if not (0 <= filter_index < bundle.n):
        raise ValidationError(f"filter index {filter_index} out of range")
    members = [i for i, rec in enumerate(bundle.images) if rec.true_label == class_index]
    if not members:
        raise ValidationError(f"class {class_index} absent from bundle")
    members.sort(key=lambda i: (-float(bundle.images[i].g[filter_index]), i))
    return members[:k]
