"""Per-image reports, filter ranking, heatmaps and PGM output."""

import numpy as np
import pytest

from cfex import ClassifierHead, ExplanationReport, McHead, MiHead, \
    ValidationError, checkpoint_from_mc, classify, explain_mc, explain_mi, \
    rf_heatmap, top_activating_images, topk_filters, write_pgm
from cfex.explain import Heatmap, _bilinear_resample

from conftest import make_bundle


@pytest.fixture
def spatial_bundle():
    rng = np.random.default_rng(0)
    spatial = [rng.uniform(0.1, 1.0, size=(2, 2, 4)).astype(np.float32)
               for _ in range(3)]
    return make_bundle(
        g_rows=[s.astype(np.float64).mean(axis=(0, 1)) for s in spatial],
        true_labels=[0, 1, 0], inferred_labels=[0, 1, 0], num_classes=2,
        spatial=spatial)


@pytest.fixture
def two_class_setup():
    # filters 0,1 drive class 0; filters 2,3 drive class 1
    weights = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]],
                       dtype=np.float32)
    classifier = ClassifierHead(weights=weights, bias=np.zeros(2, dtype=np.float32))
    bundle = make_bundle(
        g_rows=[[2.0, 1.0, 0.5, 0.0], [0.1, 0.0, 1.5, 2.5]],
        true_labels=[0, 1], inferred_labels=[0, 1], num_classes=2)
    return bundle, classifier


def keep_only(filters, n=4):
    """A mask head hard-wired to keep exactly the listed filters."""
    bias = np.full(n, -10.0)
    bias[list(filters)] = 10.0
    return McHead(weight=np.zeros((n, n)), bias=bias)


def test_explain_mc_reports_the_kept_filters(two_class_setup):
    bundle, classifier = two_class_setup
    report = explain_mc(0, bundle, classifier, keep_only([0, 1]))
    assert report.kind == "mc"
    assert report.inferred_class == 0
    # ranked by activation magnitude: g0=2.0 before g1=1.0
    assert report.active_filters == [0, 1]
    assert report.magnitudes == [2.0, 1.0]
    assert report.modified_class == 0
    np.testing.assert_array_equal(report.mask, [1, 1, 0, 0])
    base = classify(bundle.images[0].g, classifier)
    assert report.inferred_prob == pytest.approx(float(base.probs[0]))


def test_explain_mc_accepts_a_checkpoint(two_class_setup):
    bundle, classifier = two_class_setup
    head = keep_only([0])
    ckpt = checkpoint_from_mc(
        McHead(weight=head.weight.astype(np.float32),
               bias=head.bias.astype(np.float32)), 0, 2.0, 0)
    a = explain_mc(0, bundle, classifier, ckpt)
    b = explain_mc(0, bundle, classifier, head)
    assert a.active_filters == b.active_filters


def test_explain_mc_rejects_wrong_head_kind(two_class_setup):
    bundle, classifier = two_class_setup
    with pytest.raises(ValidationError):
        explain_mc(0, bundle, classifier,
                   MiHead(weight=np.zeros((4, 4)), bias=np.zeros(4)))


def test_explain_rejects_bad_image_index(two_class_setup):
    bundle, classifier = two_class_setup
    with pytest.raises(ValidationError):
        explain_mc(7, bundle, classifier, keep_only([0]))


def test_explain_mi_reports_additions(two_class_setup):
    bundle, classifier = two_class_setup
    # add 5 to filter 3 for any input: flips image 0 to class 1
    weight = np.zeros((4, 4))
    bias = np.array([-1.0, -1.0, -1.0, 5.0])
    report = explain_mi(0, bundle, classifier,
                        MiHead(weight=weight, bias=bias), alter_class=1)
    assert report.kind == "mi"
    assert report.target_class == 1
    assert report.active_filters == [3]
    assert report.magnitudes == [5.0]
    assert report.modified_class == 1
    np.testing.assert_allclose(report.addition, [0, 0, 0, 5.0])


def test_explain_mi_rejects_bad_alter_class(two_class_setup):
    bundle, classifier = two_class_setup
    with pytest.raises(ValidationError):
        explain_mi(0, bundle, classifier,
                   MiHead(weight=np.zeros((4, 4)), bias=np.zeros(4)), alter_class=9)


def test_report_json_is_plain_types(two_class_setup):
    import json

    bundle, classifier = two_class_setup
    report = explain_mc(0, bundle, classifier, keep_only([1]))
    json.dumps(report.to_json())  # must not raise on numpy scalars


def test_topk_ranking_ties_to_lower_index():
    report = ExplanationReport(
        kind="mc", image_index=0, source_path="", inferred_class=0,
        inferred_prob=1.0, target_class=None,
        active_filters=[1, 3, 2], magnitudes=[3.0, 3.0, 1.0],
        modified_class=0, modified_prob=1.0)
    # magnitudes [g1=3, g3=3, g2=1]: ranked [1, 3] for k=2
    assert topk_filters(report, 2) == [1, 3]
    assert topk_filters(report, 10) == [1, 3, 2]
    with pytest.raises(ValidationError):
        topk_filters(report, 0)


def test_ranking_order_from_explain():
    classifier = ClassifierHead(weights=np.eye(4, 2, dtype=np.float32),
                                bias=np.zeros(2, dtype=np.float32))
    bundle = make_bundle(g_rows=[[0.0, 3.0, 1.0, 3.0]], true_labels=[0],
                         inferred_labels=[0], num_classes=2)
    report = explain_mc(0, bundle, classifier, keep_only([0, 1, 2, 3]))
    assert report.active_filters == [1, 3, 2, 0]


# ---------------------------------------------------------------------------
# heatmaps


def test_bilinear_identity_resample():
    x = np.array([[0.0, 1.0], [2.0, 3.0]])
    np.testing.assert_allclose(_bilinear_resample(x, 2, 2), x)


def test_bilinear_2x2_to_4x4_hand_computed():
    # corners 0,0,0,4 -> separable surface f(y, x) = 4*x*y on [0, 1]^2
    x = np.array([[0.0, 0.0], [0.0, 4.0]])
    got = _bilinear_resample(x, 4, 4)
    ys = np.arange(4) / 3.0
    np.testing.assert_allclose(got, 4.0 * ys[:, None] * ys[None, :], atol=1e-12)


def test_bilinear_to_single_pixel_takes_the_center():
    x = np.array([[0.0, 2.0], [4.0, 6.0]])
    np.testing.assert_allclose(_bilinear_resample(x, 1, 1), [[3.0]])


def test_rf_heatmap_normalizes_to_unit_range(spatial_bundle):
    hm = rf_heatmap(0, spatial_bundle, 2, 8, 8)
    assert hm.values.shape == (8, 8)
    assert hm.values.min() == pytest.approx(0.0)
    assert hm.values.max() == pytest.approx(1.0)
    assert hm.filter_index == 2


def test_rf_heatmap_constant_slice_is_all_zero():
    spatial = np.ones((2, 2, 1), dtype=np.float32)
    bundle = make_bundle(g_rows=[[1.0]], true_labels=[0], inferred_labels=[0],
                         num_classes=1, spatial=[spatial])
    hm = rf_heatmap(0, bundle, 0, 4, 4)
    np.testing.assert_array_equal(hm.values, np.zeros((4, 4)))


def test_rf_heatmap_without_spatial_maps_fails(two_class_setup):
    bundle, _ = two_class_setup
    with pytest.raises(ValidationError) as err:
        rf_heatmap(0, bundle, 0, 4, 4)
    assert "spatial" in str(err.value)


def test_rf_heatmap_bad_filter_index(spatial_bundle):
    with pytest.raises(ValidationError):
        rf_heatmap(0, spatial_bundle, 99, 4, 4)


def test_write_pgm_bytes(tmp_path):
    hm = Heatmap(values=np.array([[0.0, 1.0], [0.5, 0.25]]), filter_index=0,
                 source_path="x")
    path = tmp_path / "out.pgm"
    write_pgm(hm, path)
    data = path.read_bytes()
    assert data.startswith(b"P5\n2 2\n255\n")
    assert data[-4:] == bytes([0, 255, 128, 64])


# ---------------------------------------------------------------------------
# top activating images


def test_top_activating_images_order_and_ties():
    bundle = make_bundle(
        g_rows=[[1.0], [3.0], [3.0], [0.5]],
        true_labels=[0, 0, 0, 1], inferred_labels=[0] * 4, num_classes=2)
    # descending activation on filter 0 within class 0, ties to lower index
    assert top_activating_images(bundle, 0, 0, 2) == [1, 2]
    assert top_activating_images(bundle, 0, 0, 10) == [1, 2, 0]
    assert top_activating_images(bundle, 0, 1, 1) == [3]


def test_top_activating_images_absent_class():
    bundle = make_bundle(g_rows=[[1.0]], true_labels=[0], inferred_labels=[0],
                         num_classes=2)
    with pytest.raises(ValidationError):
        top_activating_images(bundle, 0, 1, 1)
