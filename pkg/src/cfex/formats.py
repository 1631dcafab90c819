"""Binary formats for feature bundles, classifier heads and explainer checkpoints.

Three fixed-stride little-endian layouts:

  FEX1  feature bundle   -- per-image GAP features, optional spatial maps
  CHD1  classifier head  -- dense weights (n, C) and bias (C,)
  CFE1  explainer head   -- trained mask/addition layer weights (n, n) + bias

All floats are stored as 32-bit little-endian; loaded arrays stay float32 so
write(read(x)) round-trips bit-exactly.  Class names and manifests are JSON
sidecars.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError

MAGIC_BUNDLE = b"FEX1"
MAGIC_HEAD = b"CHD1"
MAGIC_CHECKPOINT = b"CFE1"
FORMAT_VERSION = 1

SPATIAL_MEAN_RTOL = 1e-4
SPATIAL_MEAN_ATOL = 1e-6


@dataclass
class ImageRecord:
    true_label: int
    inferred_label: int
    g: np.ndarray  # (n,) float32, >= 0
    source_path: str = ""
    spatial: np.ndarray | None = None  # (hs, ws, n) float32, >= 0


@dataclass
class FeatureBundle:
    n: int
    num_classes: int
    images: list[ImageRecord] = field(default_factory=list)

    @property
    def spatial_shape(self):
        for rec in self.images:
            if rec.spatial is not None:
                return rec.spatial.shape[:2]
        return (0, 0)

    def feature_matrix(self):
        """All GAP vectors stacked as a float64 (m, n) matrix."""
        if not self.images:
            return np.zeros((0, self.n))
        return np.stack([rec.g for rec in self.images]).astype(np.float64)

    def true_labels(self):
        return np.array([rec.true_label for rec in self.images], dtype=np.int64)

    def inferred_labels(self):
        return np.array([rec.inferred_label for rec in self.images], dtype=np.int64)

    def validate(self, allow_negative=False):
        if self.n <= 0 or self.num_classes <= 0:
            raise ValidationError("n and class count must be positive")
        hs, ws = self.spatial_shape
        for i, rec in enumerate(self.images):
            if rec.g.shape != (self.n,):
                raise ValidationError(f"image {i}: g has shape {rec.g.shape}, expected ({self.n},)")
            if not np.all(np.isfinite(rec.g)):
                raise ValidationError(f"image {i}: non-finite feature value")
            if np.any(rec.g < 0):
                msg = f"image {i}: negative feature value (post-ReLU GAP features must be >= 0)"
                if allow_negative:
                    warnings.warn(msg)
                else:
                    raise ValidationError(msg)
            if not (0 <= rec.true_label < self.num_classes):
                raise ValidationError(f"image {i}: true label {rec.true_label} out of range")
            if not (0 <= rec.inferred_label < self.num_classes):
                raise ValidationError(f"image {i}: inferred label {rec.inferred_label} out of range")
            if rec.spatial is None:
                if hs > 0:
                    raise ValidationError(f"image {i}: missing spatial map while others have one")
            else:
                if rec.spatial.shape != (hs, ws, self.n):
                    raise ValidationError(
                        f"image {i}: spatial shape {rec.spatial.shape} != {(hs, ws, self.n)}"
                    )
                if np.any(rec.spatial < 0):
                    msg = f"image {i}: negative spatial activation"
                    if allow_negative:
                        warnings.warn(msg)
                    else:
                        raise ValidationError(msg)
                means = rec.spatial.astype(np.float64).mean(axis=(0, 1))
                g64 = rec.g.astype(np.float64)
                if not np.allclose(means, g64, rtol=SPATIAL_MEAN_RTOL, atol=SPATIAL_MEAN_ATOL):
                    worst = int(np.argmax(np.abs(means - g64)))
                    raise ValidationError(
                        f"image {i}: spatial mean of channel {worst} ({means[worst]:.6g}) "
                        f"does not reproduce g ({g64[worst]:.6g})"
                    )
        return self


@dataclass
class ClassifierHead:
    weights: np.ndarray  # (n, C) float32, row = filter, column = class
    bias: np.ndarray  # (C,) float32

    @property
    def n(self):
        return self.weights.shape[0]

    @property
    def num_classes(self):
        return self.weights.shape[1]

    def validate(self):
        if self.weights.ndim != 2:
            raise ValidationError("classifier weights must be a 2-D matrix")
        if self.bias.shape != (self.num_classes,):
            raise ValidationError("classifier bias length must equal the class count")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValidationError("classifier head has non-finite entries")
        return self


KIND_MC = "mc"
KIND_MI = "mi"
_KIND_CODES = {KIND_MC: 0, KIND_MI: 1}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


@dataclass
class ExplainerCheckpoint:
    kind: str  # "mc" or "mi"
    n: int
    target_class: int
    threshold: float  # MC only; stored as 0.0 for MI
    sparsity_weight: float
    epochs_trained: int
    weight: np.ndarray  # (n, n) float32, row = output unit
    bias: np.ndarray  # (n,) float32

    def validate(self):
        if self.kind not in _KIND_CODES:
            raise ValidationError(f"unknown checkpoint kind {self.kind!r}")
        if self.kind == KIND_MC and not (0.0 < self.threshold < 1.0):
            raise ValidationError(f"MC threshold {self.threshold} outside (0, 1)")
        if self.sparsity_weight < 0:
            raise ValidationError("sparsity weight must be >= 0")
        if self.weight.shape != (self.n, self.n) or self.bias.shape != (self.n,):
            raise ValidationError("checkpoint weight/bias shapes inconsistent with n")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValidationError("checkpoint has non-finite entries")
        return self


@dataclass
class DatasetManifest:
    bundle_path: str
    head_path: str
    class_names: list[str]
    splits: list[str]  # per-image "train"/"test" tags

    def to_json(self):
        return {
            "bundle_path": self.bundle_path,
            "head_path": self.head_path,
            "class_names": list(self.class_names),
            "splits": list(self.splits),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            bundle_path=obj["bundle_path"],
            head_path=obj["head_path"],
            class_names=list(obj["class_names"]),
            splits=list(obj["splits"]),
        )

    def validate(self, bundle: FeatureBundle):
        if len(self.class_names) != bundle.num_classes:
            raise ValidationError(
                f"class-name table has {len(self.class_names)} entries, bundle declares "
                f"{bundle.num_classes} classes"
            )
        if len(self.splits) != len(bundle.images):
            raise ValidationError("split tag count does not match image count")
        for tag in self.splits:
            if tag not in ("train", "test"):
                raise ValidationError(f"unknown split tag {tag!r}")
        return self


# ---------------------------------------------------------------------------
# low-level readers/writers


class _Reader:
    """Byte-stream cursor that reports offsets in its error messages."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count, what):
        if self.pos + count > len(self.data):
            raise FormatError(
                f"truncated while reading {what}: needed {count} bytes, "
                f"{len(self.data) - self.pos} remain",
                offset=self.pos,
            )
        chunk = self.data[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def u8(self, what):
        return self.take(1, what)[0]

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def f32(self, what):
        return struct.unpack("<f", self.take(4, what))[0]

    def f32_array(self, count, what):
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4", count=count).astype(np.float32)

    def expect_magic(self, magic):
        got = self.take(len(magic), "magic")
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}", offset=0)

    def expect_version(self):
        version = self.u32("version")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}", offset=self.pos - 4)

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(
                f"{len(self.data) - self.pos} trailing bytes after the declared content",
                offset=self.pos,
            )


def _f32_bytes(arr):
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def write_feature_bundle(bundle: FeatureBundle, sink) -> int:
    """Serialize a validated bundle to a binary sink. Returns bytes written."""
    bundle.validate()
    hs, ws = bundle.spatial_shape
    out = bytearray()
    out += MAGIC_BUNDLE
    out += struct.pack("<IIIIII", FORMAT_VERSION, bundle.n, bundle.num_classes,
                       len(bundle.images), hs, ws)
    for rec in bundle.images:
        path = rec.source_path.encode("utf-8")
        if len(path) > 0xFFFF:
            raise ValidationError(f"source path longer than 65535 bytes: {rec.source_path[:60]}...")
        out += struct.pack("<IIH", rec.true_label, rec.inferred_label, len(path))
        out += path
        out += _f32_bytes(rec.g)
        if hs > 0:
            out += _f32_bytes(rec.spatial)
    sink.write(bytes(out))
    return len(out)


def read_feature_bundle(source, allow_negative=False) -> FeatureBundle:
    data = source.read()
    r = _Reader(data)
    r.expect_magic(MAGIC_BUNDLE)
    r.expect_version()
    n = r.u32("filter count")
    num_classes = r.u32("class count")
    m = r.u32("image count")
    hs = r.u32("spatial height")
    ws = r.u32("spatial width")
    if (hs == 0) != (ws == 0):
        raise FormatError(f"spatial dims must both be zero or both positive, got {hs}x{ws}",
                          offset=20)
    images = []
    for i in range(m):
        true_label = r.u32(f"image {i} true label")
        inferred_label = r.u32(f"image {i} inferred label")
        path_len = r.u16(f"image {i} path length")
        path = r.take(path_len, f"image {i} path").decode("utf-8")
        g_offset = r.pos
        g = r.f32_array(n, f"image {i} features")
        if np.any(g < 0) and not allow_negative:
            bad = int(np.argmin(g))
            raise FormatError(
                f"image {i}: negative feature value {g[bad]:.6g} in filter {bad}",
                offset=g_offset + 4 * bad,
            )
        spatial = None
        if hs > 0:
            flat = r.f32_array(hs * ws * n, f"image {i} spatial maps")
            spatial = flat.reshape(hs, ws, n)
        images.append(ImageRecord(true_label=int(true_label), inferred_label=int(inferred_label),
                                  g=g, source_path=path, spatial=spatial))
    r.done()
    bundle = FeatureBundle(n=n, num_classes=num_classes, images=images)
    bundle.validate(allow_negative=allow_negative)
    return bundle


def write_classifier_head(head: ClassifierHead, sink) -> int:
    head.validate()
    out = bytearray()
    out += MAGIC_HEAD
    out += struct.pack("<III", FORMAT_VERSION, head.n, head.num_classes)
    out += _f32_bytes(head.weights)
    out += _f32_bytes(head.bias)
    sink.write(bytes(out))
    return len(out)


def read_classifier_head(source) -> ClassifierHead:
    r = _Reader(source.read())
    r.expect_magic(MAGIC_HEAD)
    r.expect_version()
    n = r.u32("filter count")
    num_classes = r.u32("class count")
    weights = r.f32_array(n * num_classes, "weights").reshape(n, num_classes)
    bias = r.f32_array(num_classes, "bias")
    r.done()
    return ClassifierHead(weights=weights, bias=bias).validate()


def write_checkpoint(ckpt: ExplainerCheckpoint, sink) -> int:
    ckpt.validate()
    out = bytearray()
    out += MAGIC_CHECKPOINT
    out += struct.pack("<IBII", FORMAT_VERSION, _KIND_CODES[ckpt.kind], ckpt.n,
                       ckpt.target_class)
    out += struct.pack("<ffI", np.float32(ckpt.threshold), np.float32(ckpt.sparsity_weight),
                       ckpt.epochs_trained)
    out += _f32_bytes(ckpt.weight)
    out += _f32_bytes(ckpt.bias)
    sink.write(bytes(out))
    return len(out)


def read_checkpoint(source) -> ExplainerCheckpoint:
    r = _Reader(source.read())
    r.expect_magic(MAGIC_CHECKPOINT)
    r.expect_version()
    kind_offset = r.pos
    kind_code = r.u8("kind")
    if kind_code not in _CODE_KINDS:
        raise FormatError(f"invalid checkpoint kind byte {kind_code}", offset=kind_offset)
    n = r.u32("filter count")
    target_class = r.u32("target class")
    threshold = r.f32("threshold")
    sparsity_weight = r.f32("sparsity weight")
    epochs = r.u32("epochs trained")
    weight = r.f32_array(n * n, "dense weights").reshape(n, n)
    bias = r.f32_array(n, "dense bias")
    r.done()
    ckpt = ExplainerCheckpoint(
        kind=_CODE_KINDS[kind_code], n=n, target_class=int(target_class),
        threshold=float(np.float32(threshold)), sparsity_weight=float(np.float32(sparsity_weight)),
        epochs_trained=int(epochs), weight=weight, bias=bias,
    )
    return ckpt.validate()


# path-based conveniences


def save_feature_bundle(bundle, path):
    with open(path, "wb") as fh:
        return write_feature_bundle(bundle, fh)


def load_feature_bundle(path, allow_negative=False):
    with open(path, "rb") as fh:
        return read_feature_bundle(fh, allow_negative=allow_negative)


def save_classifier_head(head, path):
    with open(path, "wb") as fh:
        return write_classifier_head(head, fh)


def load_classifier_head(path):
    with open(path, "rb") as fh:
        return read_classifier_head(fh)


def save_checkpoint(ckpt, path):
    with open(path, "wb") as fh:
        return write_checkpoint(ckpt, fh)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return read_checkpoint(fh)


def save_manifest(manifest: DatasetManifest, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_json(), fh, indent=2)


def load_manifest(path) -> DatasetManifest:
    with open(path, "r", encoding="utf-8") as fh:
        return DatasetManifest.from_json(json.load(fh))
