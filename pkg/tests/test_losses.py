"""Objective components, composition and analytic-vs-numeric gradients."""

import math

import numpy as np
import pytest

from cfex import ClassifierHead, McHead, MiHead, ValidationError, ce_loss, \
    finite_diff_check, grad_mc, grad_mi, l1_loss, logits_contribution, \
    mc_total_loss, mi_total_loss
from cfex.losses import (LOG_CLAMP, mc_kink_units, mi_kink_units,
                         unit_exclusion_masks)

GRAD_TOL = 1e-4


def random_problem(seed, n=8, c=3, m=4):
    rng = np.random.default_rng(seed)
    G = rng.uniform(0, 2, size=(m, n))
    classifier = ClassifierHead(weights=rng.standard_normal((n, c)).astype(np.float32),
                                bias=rng.standard_normal(c).astype(np.float32))
    params = {"weight": rng.standard_normal((n, n)) / math.sqrt(n),
              "bias": rng.standard_normal(n) * 0.1}
    targets = rng.integers(c, size=m)
    return G, classifier, params, targets


# ---------------------------------------------------------------------------
# components


def test_ce_uniform_is_log_c():
    assert ce_loss([0.25] * 4, 2) == pytest.approx(math.log(4), rel=1e-12)


def test_ce_hand_value():
    p = 1.0 / (1.0 + math.exp(-1.0))
    assert ce_loss([p, 1 - p], 0) == pytest.approx(-math.log(p), rel=1e-12)


def test_ce_clamped_away_from_infinity():
    assert ce_loss([0.0, 1.0], 0) == pytest.approx(-math.log(LOG_CLAMP))


def test_ce_target_out_of_range():
    with pytest.raises(ValidationError):
        ce_loss([0.5, 0.5], 2)


def test_l1_is_plain_sum():
    assert l1_loss([0.5, 0.0, 1.25]) == pytest.approx(1.75)


def test_l1_rejects_negative_input():
    with pytest.raises(ValidationError):
        l1_loss([0.5, -0.1])


def test_logits_contribution_hand_value():
    head = ClassifierHead(weights=np.array([[0.5, 0.0], [-1.0, 0.0]], dtype=np.float32),
                          bias=np.zeros(2, dtype=np.float32))
    # f*g*w = 1*2*0.5 + 0*3*(-1) = 1
    assert logits_contribution([1.0, 0.0], [2.0, 3.0], head, 0) == pytest.approx(1.0)
    # absolute variant rectifies the classifier column
    assert logits_contribution([1.0, 1.0], [2.0, 3.0], head, 0,
                               absolute=True) == pytest.approx(1.0 + 3.0)


def test_logits_contribution_full_mask_equals_logit_minus_bias():
    rng = np.random.default_rng(5)
    n, c = 6, 3
    head = ClassifierHead(weights=rng.standard_normal((n, c)).astype(np.float32),
                          bias=rng.standard_normal(c).astype(np.float32))
    g = rng.uniform(0, 2, size=n)
    z = g @ head.weights.astype(np.float64) + head.bias.astype(np.float64)
    got = logits_contribution(np.ones(n), g, head, 1)
    assert got == pytest.approx(z[1] - float(head.bias[1]), rel=1e-10)


# ---------------------------------------------------------------------------
# composite objectives


def test_mc_total_composes_its_parts():
    G, classifier, params, targets = random_problem(0)
    head = McHead(weight=params["weight"], bias=params["bias"])
    bd = mc_total_loss(G, targets, head, classifier, 2.0)
    assert bd.total == pytest.approx(bd.ce + 2.0 * bd.l1 - bd.logits_term, abs=1e-10)


def test_mi_total_composes_its_parts():
    G, classifier, params, targets = random_problem(1)
    head = MiHead(weight=params["weight"], bias=params["bias"])
    bd = mi_total_loss(G, targets, head, classifier, 1.0)
    assert bd.logits_term == 0.0
    assert bd.total == pytest.approx(bd.ce + bd.l1, abs=1e-10)


def test_sparsity_weight_enters_linearly():
    G, classifier, params, targets = random_problem(2)
    head = McHead(weight=params["weight"], bias=params["bias"])
    b0 = mc_total_loss(G, targets, head, classifier, 0.0)
    b1 = mc_total_loss(G, targets, head, classifier, 1.0)
    b3 = mc_total_loss(G, targets, head, classifier, 3.0)
    assert b3.total - b0.total == pytest.approx(3 * (b1.total - b0.total), abs=1e-10)
    assert b0.ce == b1.ce == b3.ce  # only the weighting changes, not the parts


def test_disabling_logits_term_zeroes_it():
    G, classifier, params, targets = random_problem(3)
    head = McHead(weight=params["weight"], bias=params["bias"])
    bd = mc_total_loss(G, targets, head, classifier, 2.0, use_logits=False)
    assert bd.logits_term == 0.0
    assert bd.total == pytest.approx(bd.ce + 2.0 * bd.l1, abs=1e-10)


def test_scalar_target_broadcasts():
    G, classifier, params, _ = random_problem(4)
    head = McHead(weight=params["weight"], bias=params["bias"])
    a = mc_total_loss(G, 1, head, classifier, 2.0)
    b = mc_total_loss(G, np.full(len(G), 1), head, classifier, 2.0)
    assert a == b


def test_empty_batch_rejected():
    _, classifier, params, _ = random_problem(5)
    head = McHead(weight=params["weight"], bias=params["bias"])
    with pytest.raises(ValidationError):
        mc_total_loss(np.zeros((0, 8)), 0, head, classifier, 2.0)


# ---------------------------------------------------------------------------
# gradients


def check_mc_gradients(seed, **loss_kw):
    G, classifier, params, targets = random_problem(seed)
    head = McHead(weight=params["weight"], bias=params["bias"])
    grads, _ = grad_mc(G, targets, head, classifier, 2.0, **loss_kw)
    exclude = unit_exclusion_masks(mc_kink_units(head, G), head.n)

    def loss():
        return mc_total_loss(G, targets, head, classifier, 2.0, **loss_kw).total

    return finite_diff_check(loss, params, grads, exclude=exclude)


def check_mi_gradients(seed):
    G, classifier, params, targets = random_problem(seed)
    head = MiHead(weight=params["weight"], bias=params["bias"])
    grads, _ = grad_mi(G, targets, head, classifier, 1.0)
    exclude = unit_exclusion_masks(mi_kink_units(head, G), head.n)

    def loss():
        return mi_total_loss(G, targets, head, classifier, 1.0).total

    return finite_diff_check(loss, params, grads, exclude=exclude)


@pytest.mark.parametrize("seed", range(5))
def test_mc_gradient_matches_finite_differences(seed):
    assert check_mc_gradients(seed) <= GRAD_TOL


@pytest.mark.parametrize("seed", range(5))
def test_mi_gradient_matches_finite_differences(seed):
    assert check_mi_gradients(seed) <= GRAD_TOL


def test_mc_gradient_without_logits_term():
    assert check_mc_gradients(7, use_logits=False) <= GRAD_TOL


def test_mc_gradient_with_absolute_logits_term():
    assert check_mc_gradients(8, logits_abs=True) <= GRAD_TOL


def test_dead_mask_head_has_zero_gradient():
    # every sigmoid far below threshold: no unit is on its support, so the
    # objective is locally constant in the parameters
    G, classifier, params, targets = random_problem(9)
    params["weight"][:] = 0.0
    params["bias"][:] = -10.0
    head = McHead(weight=params["weight"], bias=params["bias"])
    grads, bd = grad_mc(G, targets, head, classifier, 2.0)
    np.testing.assert_array_equal(grads["weight"], 0.0)
    np.testing.assert_array_equal(grads["bias"], 0.0)
    assert bd.l1 == 0.0


def test_l1_gradient_component_scales_with_lambda():
    G, classifier, params, targets = random_problem(10)
    head = McHead(weight=params["weight"], bias=params["bias"])
    g0, _ = grad_mc(G, targets, head, classifier, 0.0)
    g1, _ = grad_mc(G, targets, head, classifier, 1.0)
    g2, _ = grad_mc(G, targets, head, classifier, 2.0)
    np.testing.assert_allclose(g2["weight"] - g0["weight"],
                               2 * (g1["weight"] - g0["weight"]),
                               rtol=1e-10, atol=1e-12)


def test_finite_diff_check_rejects_float32_params():
    def loss():
        return 0.0

    with pytest.raises(ValidationError):
        finite_diff_check(loss, {"w": np.zeros(2, dtype=np.float32)},
                          {"w": np.zeros(2)})


def test_finite_diff_check_flags_a_wrong_gradient():
    x = np.array([1.0, 2.0])

    def loss():
        return float((x ** 2).sum())

    good = finite_diff_check(loss, {"x": x}, {"x": 2 * x})
    bad = finite_diff_check(loss, {"x": x}, {"x": 3 * x})
    assert good <= 1e-8
    assert bad > 0.1
