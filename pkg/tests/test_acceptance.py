"""End-to-end acceptance checks for the full toolkit.

Each test prints a single pass/fail line so a suite run doubles as a short
report.  The shared synthetic dataset (n=64, 10 classes, 200 images per
class) and the per-class mask heads are trained once per session.
"""

import io
import struct
import time

import numpy as np
import pytest

from cfex import ClassifierHead, ExplainerCheckpoint, FormatError, TrainConfig, \
    additive_classify, checkpoint_from_mc, classify, disable_filters_eval, \
    finite_diff_check, global_filter_stats, global_mc_set, grad_mc, grad_mi, \
    logits_ablation, masked_classify, mc_forward_infer, mc_total_loss, \
    mi_total_loss, min_single_addition, min_sufficient_mask, select_subset, \
    sparsity_sweep, synth_dataset, train_classifier_head, train_mc, train_mi
from cfex.formats import (ImageRecord, FeatureBundle, read_checkpoint,
                          read_classifier_head, read_feature_bundle,
                          write_checkpoint, write_classifier_head,
                          write_feature_bundle)
from cfex.heads import McHead, MiHead
from cfex.losses import mc_kink_units, mi_kink_units, unit_exclusion_masks
from cfex.model import batch_top_class
from cfex.train import POLICY_INFERRED_EQUALS_TARGET, POLICY_INFERRED_NOT_TARGET


def criterion(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def dataset():
    bundle, classifier = synth_dataset(64, 10, 200, seed=0)
    return bundle, classifier


@pytest.fixture(scope="module")
def mc_heads(dataset):
    """Default-config mask heads for all ten classes, with the wall time."""
    bundle, classifier = dataset
    start = time.perf_counter()
    heads = {c: train_mc(bundle, classifier, c, TrainConfig()) for c in range(10)}
    return heads, time.perf_counter() - start


def test_gradient_correctness():
    start = time.perf_counter()
    worst = 0.0
    n, C, batch = 8, 3, 4
    for seed in range(5):
        rng = np.random.default_rng(seed)
        G = rng.uniform(0, 3, size=(batch, n))
        classifier = ClassifierHead(
            weights=rng.standard_normal((n, C)).astype(np.float32),
            bias=rng.standard_normal(C).astype(np.float32))
        target = int(rng.integers(C))
        params = {"weight": rng.standard_normal((n, n)) * 0.3,
                  "bias": rng.standard_normal(n) * 0.1}

        mc = McHead(weight=params["weight"], bias=params["bias"])
        grads, _ = grad_mc(G, target, mc, classifier, 2.0)
        worst = max(worst, finite_diff_check(
            lambda: mc_total_loss(G, target, mc, classifier, 2.0).total,
            params, grads,
            exclude=unit_exclusion_masks(mc_kink_units(mc, G), n)))

        mi = MiHead(weight=params["weight"], bias=params["bias"])
        grads, _ = grad_mi(G, target, mi, classifier, 1.0)
        worst = max(worst, finite_diff_check(
            lambda: mi_total_loss(G, target, mi, classifier, 1.0).total,
            params, grads,
            exclude=unit_exclusion_masks(mi_kink_units(mi, G), n)))
    elapsed = time.perf_counter() - start
    criterion("gradient-correctness",
              worst <= 1e-4 and elapsed < 5.0,
              f"max rel err {worst:.3g} (tol 1e-4), {elapsed:.1f}s (limit 5s)")


def test_classifier_accuracy(dataset):
    bundle, classifier = dataset
    acc = float(np.mean(batch_top_class(bundle.feature_matrix(), classifier)
                        == bundle.true_labels()))
    criterion("classifier-train-accuracy", acc >= 0.99,
              f"train accuracy {acc:.4f} (needs >= 0.99)")


def test_mc_retention(dataset, mc_heads):
    bundle, classifier = dataset
    heads, elapsed = mc_heads
    G_all = bundle.feature_matrix()
    worst_retention, worst_card = 1.0, 0.0
    for c, (head, report) in heads.items():
        idx = select_subset(bundle, POLICY_INFERRED_EQUALS_TARGET, c)
        G = G_all[idx]
        masks = mc_forward_infer(head, G)
        kept = batch_top_class(G * masks, classifier)
        worst_retention = min(worst_retention, float(np.mean(kept == c)))
        worst_card = max(worst_card, float(masks.sum(axis=1).mean()))
    criterion("mc-retention",
              worst_retention >= 0.95 and worst_card < 16 and elapsed < 120,
              f"min retention {worst_retention:.4f} (needs >= 0.95), "
              f"max mean cardinality {worst_card:.2f} (needs < 16), "
              f"{elapsed:.1f}s for 10 classes (limit 120s)")


def test_mi_flip_rate(dataset):
    bundle, classifier = dataset
    alter = 3
    start = time.perf_counter()
    head, report = train_mi(bundle, classifier, alter, TrainConfig())
    elapsed = time.perf_counter() - start
    idx = select_subset(bundle, POLICY_INFERRED_NOT_TARGET, alter)
    flips = 0
    from cfex import mi_forward

    for i in idx:
        g = bundle.images[i].g.astype(np.float64)
        pred = additive_classify(g, mi_forward(head, g), classifier)
        flips += pred.top_class == alter
    rate = flips / len(idx)
    criterion("mi-flip-rate", rate >= 0.90 and elapsed < 60,
              f"flip rate {rate:.4f} (needs >= 0.90), {elapsed:.1f}s (limit 60s)")


def test_sparsity_monotonicity(dataset):
    bundle, classifier = dataset
    out = sparsity_sweep(bundle, classifier, 0, [1.0, 2.0, 4.0], TrainConfig(seed=0))
    counts = [row.mean_filters for row in out["train"]]
    ok = counts[0] >= counts[1] >= counts[2] and counts[0] > counts[2]
    criterion("sparsity-monotonicity", ok,
              "mean filters " + " -> ".join(f"{c:.2f}" for c in counts) +
              " for lambda 1, 2, 4 (non-increasing, strict overall)")


def test_logits_loss_effect(dataset):
    bundle, classifier = dataset
    rows = logits_ablation(bundle, classifier, 0, TrainConfig(seed=0))
    with_term, without = rows
    ok = (with_term.ce <= without.ce + 0.05
          and with_term.logits_value > without.logits_value)
    criterion("logits-loss-effect", ok,
              f"ce {with_term.ce:.4f} (with) vs {without.ce:.4f} (without, +0.05 slack); "
              f"logit mass {with_term.logits_value:.2f} > {without.logits_value:.2f}")


def _single_image_problem(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, 11))  # n <= 10
    C = 3
    classifier = ClassifierHead(
        weights=rng.standard_normal((n, C)).astype(np.float32),
        bias=rng.standard_normal(C).astype(np.float32))
    g = rng.uniform(0.1, 2.0, size=n).astype(np.float32)
    return n, classifier, g


def test_oracle_bounds():
    start = time.perf_counter()
    # a softer keep-threshold avoids dead-unit collapse on single-image problems
    config = TrainConfig(sparsity_weight=0.5, epochs=400, batch_size=1, threshold=0.3)
    sufficient = minimal = tight = problems = flips_checked = 0
    for seed in range(50):
        n, classifier, g = _single_image_problem(seed)
        target = classify(g, classifier).top_class
        bundle = FeatureBundle(n=n, num_classes=3, images=[
            ImageRecord(true_label=target, inferred_label=target, g=g)])
        head, _ = train_mc(bundle, classifier, target, config)
        mask = mc_forward_infer(head, g.astype(np.float64))
        oracle = min_sufficient_mask(g, classifier, target)
        problems += 1
        if masked_classify(g, mask, classifier).top_class == target:
            sufficient += 1
            if mask.sum() >= oracle.objective:
                minimal += 1

        z = classify(g, classifier).logits
        alter = int(np.argmin(z))
        res = min_single_addition(g, classifier, alter)
        if res.feasible:
            flips_checked += 1
            delta = res.amount
            above = np.zeros(n)
            above[res.coordinate] = delta * (1 + 1e-3)
            below = np.zeros(n)
            below[res.coordinate] = max(0.0, delta * (1 - 1e-3))
            if (additive_classify(g, above, classifier).top_class == alter
                    and additive_classify(g, below, classifier).top_class != alter):
                tight += 1
    elapsed = time.perf_counter() - start
    ok = (sufficient == problems and minimal == sufficient
          and tight == flips_checked and elapsed < 60)
    criterion("oracle-bounds", ok,
              f"{sufficient}/{problems} trained masks sufficient and >= enumeration "
              f"minimum; {tight}/{flips_checked} addition boundaries tight at "
              f"+-1e-3*delta; {elapsed:.1f}s (limit 60s)")


def test_ablation_selectivity(dataset, mc_heads):
    bundle, classifier = dataset
    heads, _ = mc_heads
    target = 0
    stats = global_filter_stats(bundle, classifier, heads[target][0], target)
    disabled = global_mc_set(stats, min_count=1)
    result = disable_filters_eval(bundle, classifier, disabled, target,
                                  baseline_seed=0)
    recall_drop = result.recall_before - result.recall_after
    accuracy_drop = result.accuracy_before - result.accuracy_after
    random_drop = result.recall_before - result.recall_random
    ok = (recall_drop >= 5 * accuracy_drop and recall_drop >= 2 * random_drop)
    criterion("ablation-selectivity", ok,
              f"disabling {len(disabled)} filters: recall drop {recall_drop:.4f} vs "
              f"accuracy drop {accuracy_drop:.4f} (>= 5x) and random-baseline drop "
              f"{random_drop:.4f} (>= 2x)")


def test_determinism():
    bundle, classifier = synth_dataset(16, 4, 40, seed=11)

    def artifacts():
        head = train_classifier_head(bundle, 4, TrainConfig(epochs=50, seed=3))
        sink = io.BytesIO()
        write_classifier_head(head, sink)
        chd = sink.getvalue()
        mc, report = train_mc(bundle, classifier, 1, TrainConfig(epochs=50, seed=3))
        sink = io.BytesIO()
        write_checkpoint(checkpoint_from_mc(mc, 1, 2.0, 50), sink)
        import json

        return chd, sink.getvalue(), json.dumps(report.to_json(), sort_keys=True)

    a, b = artifacts(), artifacts()
    ok = a[0] == b[0] and a[1] == b[1] and a[2] == b[2]
    criterion("determinism", ok,
              "two identically seeded runs give byte-identical CHD1/CFE1 and "
              "identical JSON reports")


def test_format_round_trips():
    rng = np.random.default_rng(0)
    ok = True
    for trial in range(25):
        n = int(rng.integers(1, 12))
        C = int(rng.integers(1, 5))
        m = int(rng.integers(0, 5))
        images = [ImageRecord(true_label=int(rng.integers(C)),
                              inferred_label=int(rng.integers(C)),
                              g=rng.uniform(0, 3, size=n).astype(np.float32),
                              source_path=f"p{i}") for i in range(m)]
        bundle = FeatureBundle(n=n, num_classes=C, images=images)
        sink = io.BytesIO()
        write_feature_bundle(bundle, sink)
        data = sink.getvalue()
        ok &= write_and_read_match(bundle, data)

        head = ClassifierHead(weights=rng.standard_normal((n, C)).astype(np.float32),
                              bias=rng.standard_normal(C).astype(np.float32))
        sink = io.BytesIO()
        write_classifier_head(head, sink)
        back = read_classifier_head(io.BytesIO(sink.getvalue()))
        ok &= back.weights.tobytes() == head.weights.tobytes()

        ckpt = ExplainerCheckpoint(
            kind="mc" if trial % 2 else "mi", n=n, target_class=int(rng.integers(C)),
            threshold=0.5 if trial % 2 else 0.0,
            sparsity_weight=float(np.float32(rng.uniform(0, 4))),
            epochs_trained=int(rng.integers(300)),
            weight=rng.standard_normal((n, n)).astype(np.float32),
            bias=rng.standard_normal(n).astype(np.float32))
        sink = io.BytesIO()
        write_checkpoint(ckpt, sink)
        back = read_checkpoint(io.BytesIO(sink.getvalue()))
        ok &= back.weight.tobytes() == ckpt.weight.tobytes()

    # corrupted headers must be rejected with a byte offset
    sink = io.BytesIO()
    write_feature_bundle(FeatureBundle(n=2, num_classes=2, images=[
        ImageRecord(true_label=0, inferred_label=0,
                    g=np.ones(2, dtype=np.float32))]), sink)
    data = sink.getvalue()
    rejected = 0
    for corrupt in (b"ZZZZ" + data[4:], data[:-3], data + b"!!"):
        try:
            read_feature_bundle(io.BytesIO(corrupt))
        except FormatError as exc:
            rejected += exc.offset is not None
    ok &= rejected == 3
    criterion("format-round-trips", ok,
              "25 randomized FEX1/CHD1/CFE1 instances round-trip bit-exactly; "
              "3/3 corrupted variants rejected with offsets")


def write_and_read_match(bundle, data):
    back = read_feature_bundle(io.BytesIO(data))
    if len(back.images) != len(bundle.images):
        return False
    return all(a.g.tobytes() == b.g.tobytes() and a.true_label == b.true_label
               for a, b in zip(bundle.images, back.images))
