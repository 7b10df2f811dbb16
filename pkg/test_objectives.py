"""
TsallisSeg - Objective tests: closed forms, logit gradients against
finite differences, the Tsallis gradient bounds and weighting curves.
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from backend.core_logic.objectives import (
    LossContext, ce_loss, grad_peak, js_loss, loss_and_logit_grad, pixel_weights, resolve_kind,
    tsallis_grad_bounds, tsallis_loss, uniform_grid, weighted_ce, weighting_curve,
)
from backend.core_logic.schedules import parse_loss_kind
from backend.core_logic.tensor_core import softmax
from shared.models import LossKind, LossName, MaskNormalization, QSchedule

CE = LossKind(name=LossName.CE)
JS = LossKind(name=LossName.JS)
COS = LossKind(name=LossName.COSPGD)
SEG = LossKind(name=LossName.SEGPGD)
MASKED = LossKind(name=LossName.MASKED_CE)
MASKED_TOTAL = LossKind(name=LossName.MASKED_CE, mask_normalization=MaskNormalization.TOTAL)


def tsallis(q):
    return LossKind(name=LossName.TSALLIS, q=q)


@pytest.fixture
def field_case():
    rng = np.random.default_rng(11)
    logits = rng.normal(0.0, 2.0, size=(4, 3, 5))
    labels = rng.integers(0, 4, size=(3, 5))
    labels[0, 0] = 255
    # make sure both correct and wrong pixels exist
    labels[1, 1] = int(np.argmax(logits[:, 1, 1]))
    labels[2, 2] = (int(np.argmax(logits[:, 2, 2])) + 1) % 4
    return logits, labels


def _fd_logit_grad(fn, logits, h=1e-6):
    grad = np.zeros_like(logits)
    for idx in np.ndindex(*logits.shape):
        up, down = logits.copy(), logits.copy()
        up[idx] += h
        down[idx] -= h
        grad[idx] = (fn(up) - fn(down)) / (2 * h)
    return grad


# ============== TEST 1: Closed forms ==============

def test_known_values():
    assert ce_loss(1.0) == pytest.approx(0.0)
    assert ce_loss(0.5) == pytest.approx(math.log(2))
    assert tsallis_loss(0.5, 0.0) == pytest.approx(0.5)
    assert tsallis_loss(0.25, -1.0) == pytest.approx((1 - 0.25 ** 2) / 2)
    assert js_loss(1.0) == pytest.approx(0.0, abs=1e-12)
    assert float(js_loss(1e-12)) == pytest.approx(math.log(2), abs=1e-9)


def test_tsallis_rejects_q_one_and_bad_probability():
    with pytest.raises(ValueError, match="cross-entropy"):
        tsallis_loss(0.5, 1.0)
    with pytest.raises(ValueError):
        tsallis_loss(1.5, 0.0)
    with pytest.raises(ValueError):
        ce_loss(-0.1)


@settings(max_examples=60, deadline=None)
@given(st.floats(min_value=0.01, max_value=1.0))
def test_tsallis_approaches_ce_as_q_goes_to_one(p):
    assert tsallis_loss(p, 1.0 - 1e-7) == pytest.approx(float(ce_loss(p)), rel=1e-5, abs=1e-6)


def test_tsallis_near_one_stays_within_the_second_order_gap():
    # 0 <= -ln p - L_q <= (1 - q)(ln p)^2 / 2
    a = 1e-4
    grid = np.geomspace(1e-3, 1.0, 2001)
    gap = np.array([float(ce_loss(p)) - float(tsallis_loss(p, 1.0 - a)) for p in grid])
    bound = a * np.log(grid) ** 2 / 2
    assert np.all(gap >= -1e-12)
    assert np.all(gap <= bound + 1e-12)
    assert gap.max() <= 2.4e-3
    # the 1e-3 gap holds once (ln p)^2 <= 20
    assert np.all(gap[grid >= 0.0115] <= 1e-3)


def test_grad_peak_values():
    assert grad_peak(0.0) == pytest.approx(0.5)
    assert grad_peak(-3.0) == pytest.approx(0.8)
    assert grad_peak(-1.0) == pytest.approx(2.0 / 3.0)
    with pytest.raises(ValueError):
        grad_peak(1.0)


# ============== TEST 2: Kind resolution ==============

def test_resolve_kind():
    assert resolve_kind(CE) == CE
    assert resolve_kind(tsallis(0.5)).q == 0.5
    assert resolve_kind(tsallis(1.0)).name == LossName.CE
    scheduled = LossKind(name=LossName.TSALLIS, q_schedule=QSchedule.linear(-2.0, 1.0))
    assert resolve_kind(scheduled, q=-1.5).q == -1.5
    assert resolve_kind(scheduled, q=1.0).name == LossName.CE
    with pytest.raises(ValueError, match="no concrete q"):
        resolve_kind(scheduled)
    assert resolve_kind(parse_loss_kind("tsallis:-3")).q == -3.0


# ============== TEST 3: Logit gradients ==============

@pytest.mark.parametrize("kind", [CE, JS, tsallis(-3.0), tsallis(0.0), tsallis(0.5)],
                         ids=["ce", "js", "tsallis-3", "tsallis0", "tsallis0.5"])
def test_logit_grad_matches_finite_differences(field_case, kind):
    logits, labels = field_case
    report = loss_and_logit_grad(kind, logits, labels)
    fd = _fd_logit_grad(lambda u: loss_and_logit_grad(kind, u, labels).scalar_loss, logits)
    np.testing.assert_allclose(report.logit_grad, fd, rtol=1e-5, atol=1e-9)
    assert np.all(report.logit_grad[:, 0, 0] == 0)


@pytest.mark.parametrize("kind,ctx", [
    (COS, None), (SEG, LossContext(t=30, T=100)), (MASKED, None), (MASKED_TOTAL, None),
], ids=["cospgd", "segpgd", "masked", "masked-total"])
def test_weighted_kinds_ascend_frozen_weight_ce(field_case, kind, ctx):
    logits, labels = field_case
    report = loss_and_logit_grad(kind, logits, labels, ctx)
    valid = labels != 255
    correct = valid & (np.argmax(logits, axis=0) == labels)
    normalizer = None
    if kind == MASKED:
        normalizer = float(np.count_nonzero(correct))
    frozen = report.weights

    fd = _fd_logit_grad(lambda u: weighted_ce(u, labels, frozen, normalizer=normalizer).scalar_loss, logits)
    np.testing.assert_allclose(report.logit_grad, fd, rtol=1e-5, atol=1e-9)
    assert report.scalar_loss == pytest.approx(weighted_ce(logits, labels, frozen, normalizer=normalizer).scalar_loss)


def test_tsallis_grad_is_reweighted_ce_grad(field_case):
    logits, labels = field_case
    probs = softmax(logits)
    p_y = np.take_along_axis(probs, np.where(labels == 255, 0, labels)[None], axis=0)[0]
    ce = loss_and_logit_grad(CE, logits, labels).logit_grad
    for q in (-3.0, -1.0, 0.0, 0.5):
        ts = loss_and_logit_grad(tsallis(q), logits, labels).logit_grad
        expected = ce * np.where(labels == 255, 0.0, p_y ** (1.0 - q))[None]
        np.testing.assert_allclose(ts, expected, rtol=1e-10, atol=1e-15)


ORACLE_INSTANCES = 100
ORACLE_KINDS = [CE, JS, tsallis(-3.0), tsallis(-1.0), tsallis(0.0), tsallis(0.5), tsallis(0.9),
                SEG, COS, MASKED, MASKED_TOTAL]


def _random_instance(rng):
    k = int(rng.integers(2, 9))
    logits = rng.normal(0.0, 1.0, size=(k, 2, 2))
    labels = rng.integers(0, k, size=(2, 2))
    return logits, labels


def _norm_rel_err(analytic, fd):
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(fd)), 1e-12)
    return float(np.linalg.norm(analytic - fd)) / scale


@pytest.mark.parametrize("kind", ORACLE_KINDS, ids=[
    "ce", "js", "tsallis-3", "tsallis-1", "tsallis0", "tsallis0.5", "tsallis0.9",
    "segpgd", "cospgd", "masked", "masked-total",
])
def test_logit_grads_of_random_instances_match_finite_differences(kind):
    rng = np.random.default_rng(2024)
    ctx = LossContext(t=30, T=100)
    worst = 0.0
    for _ in range(ORACLE_INSTANCES):
        logits, labels = _random_instance(rng)
        report = loss_and_logit_grad(kind, logits, labels, ctx)
        if kind.name in (LossName.CE, LossName.JS, LossName.TSALLIS):
            fn = lambda u: loss_and_logit_grad(kind, u, labels, ctx).scalar_loss  # noqa: E731
        else:
            normalizer = None
            if kind == MASKED:
                normalizer = float(np.count_nonzero(np.argmax(logits, axis=0) == labels))
            frozen = report.weights
            fn = lambda u: weighted_ce(u, labels, frozen, normalizer=normalizer).scalar_loss  # noqa: E731
        fd = _fd_logit_grad(fn, logits, h=1e-5)
        worst = max(worst, _norm_rel_err(report.logit_grad, fd))
    assert worst <= 1e-4


def test_tsallis_grad_is_reweighted_ce_grad_on_random_pixels():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        k = int(rng.integers(2, 9))
        logits = rng.normal(0.0, 2.0, size=(k, 1, 1))
        labels = rng.integers(0, k, size=(1, 1))
        q = float(rng.uniform(-3.0, 0.9))
        p_y = float(softmax(logits)[labels[0, 0], 0, 0])
        ce = loss_and_logit_grad(CE, logits, labels).logit_grad
        ts = loss_and_logit_grad(tsallis(q), logits, labels).logit_grad
        np.testing.assert_allclose(ts, ce * p_y ** (1.0 - q), rtol=1e-6, atol=1e-12)


def test_segpgd_weights_follow_lambda(field_case):
    logits, labels = field_case
    correct = (labels != 255) & (np.argmax(logits, axis=0) == labels)
    weights = pixel_weights(SEG, logits, labels, LossContext(t=50, T=100))
    np.testing.assert_allclose(weights[correct], 0.75)
    wrong = (labels != 255) & ~correct
    np.testing.assert_allclose(weights[wrong], 0.25)
    with pytest.raises(ValueError, match="iteration context"):
        loss_and_logit_grad(SEG, logits, labels)


def test_masked_ce_is_zero_once_everything_is_wrong():
    logits = np.zeros((2, 1, 3))
    logits[1] = 5.0
    labels = np.zeros((1, 3), dtype=np.int64)
    report = loss_and_logit_grad(MASKED, logits, labels)
    assert report.scalar_loss == 0.0
    assert not report.logit_grad.any()


def test_masked_normalizations_differ(field_case):
    logits, labels = field_case
    masked = loss_and_logit_grad(MASKED, logits, labels).scalar_loss
    total = loss_and_logit_grad(MASKED_TOTAL, logits, labels).scalar_loss
    valid = np.count_nonzero(labels != 255)
    correct = np.count_nonzero((labels != 255) & (np.argmax(logits, axis=0) == labels))
    assert total == pytest.approx(masked * correct / valid)


def test_all_ignored_image_has_zero_objective():
    report = loss_and_logit_grad(CE, np.ones((3, 2, 2)), np.full((2, 2), 255))
    assert report.scalar_loss == 0.0
    assert not report.logit_grad.any()


def test_shape_mismatch_raises():
    with pytest.raises(ValueError, match="labels shape"):
        loss_and_logit_grad(CE, np.zeros((3, 2, 2)), np.zeros((2, 3), dtype=np.int64))


# ============== TEST 4: Gradient norm bounds ==============

pixel_logits = st.lists(st.floats(min_value=-8, max_value=8), min_size=2, max_size=6)


@settings(max_examples=80, deadline=None)
@given(pixel_logits, st.floats(min_value=-3.0, max_value=1.0))
def test_tsallis_grad_norm_sits_between_bounds(values, q):
    logits = np.asarray(values, dtype=np.float64)[:, None, None]
    label = np.zeros((1, 1), dtype=np.int64)
    kind = tsallis(q)
    grad = loss_and_logit_grad(kind, logits, label).logit_grad[:, 0, 0]
    p_y = float(softmax(logits)[0, 0, 0])
    lower, upper = tsallis_grad_bounds(p_y, q, len(values))
    norm_sq = float(np.sum(grad ** 2))
    # K = 2 meets the lower bound with equality; allow rounding in 1 - p
    assert lower * (1 - 1e-6) <= norm_sq <= upper * (1 + 1e-6) + 1e-300


def test_bounds_reject_bad_arguments():
    with pytest.raises(ValueError):
        tsallis_grad_bounds(0.0, 0.0, 3)
    with pytest.raises(ValueError):
        tsallis_grad_bounds(0.5, 0.0, 1)


# ============== TEST 5: Weighting curves ==============

@pytest.mark.parametrize("text,peak", [("tsallis:-3", 0.8), ("tsallis:0", 0.5), ("tsallis:-1", 2.0 / 3.0)])
def test_tsallis_curve_peaks_at_closed_form(text, peak):
    grid = uniform_grid(1e-3)
    curve = weighting_curve(parse_loss_kind(text), grid)
    p_max, w_max = max(curve, key=lambda pw: pw[1])
    assert p_max == pytest.approx(peak, abs=1e-3)
    assert w_max == pytest.approx(1.0)


def test_ce_curve_is_largest_at_smallest_probability():
    grid = uniform_grid(1e-3)
    curve = weighting_curve(CE, grid)
    assert curve[0][0] == pytest.approx(1e-3)
    assert curve[0][1] == 1.0
    weights = [w for _, w in curve]
    assert all(a >= b for a, b in zip(weights, weights[1:]))


def test_curve_rejects_segpgd_and_bad_grids():
    with pytest.raises(ValueError, match="no stationary curve"):
        weighting_curve(SEG, [0.5])
    with pytest.raises(ValueError):
        weighting_curve(CE, [0.0, 0.5])
    with pytest.raises(ValueError):
        uniform_grid(0.7)
    assert uniform_grid(0.25) == [0.25, 0.5, 0.75]
