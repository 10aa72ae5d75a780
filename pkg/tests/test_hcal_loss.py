import math
import random

import pytest

from hier_resolve.errors import DegenerateReference, InvalidScores
from hier_resolve.hcal_loss import (
    LossParams,
    PreferenceScores,
    batch_hcal,
    dpo_loss,
    grad_check,
    hcal,
    kl_term,
    preference_loss,
    scores_from_record,
    semantic_loss,
    softplus,
)


def _reference_softplus(x):
    return math.log1p(math.exp(-abs(x))) + max(x, 0.0)


def test_preference_loss_worked_value():
    value = preference_loss(PreferenceScores(-1.0, -1.5), tau=0.1)
    assert value == pytest.approx(_reference_softplus(-5.0), abs=1e-12)
    assert value == pytest.approx(0.0067153, abs=1e-7)


def test_preference_loss_vanishes_with_large_gap():
    values = [preference_loss(PreferenceScores(gap, 0.0), tau=0.1) for gap in (0.5, 1.0, 5.0, 50.0, 500.0)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert values[-1] == 0.0


def test_semantic_loss_worked_value():
    assert semantic_loss(PreferenceScores(-1.0, -1.5)) == pytest.approx(0.4740770, abs=1e-7)


def test_total_at_symmetric_point():
    breakdown = hcal(PreferenceScores(-2.0, -2.0), LossParams(tau=0.3, gamma=1.0, beta=0.0))
    assert breakdown.total == pytest.approx(2 * math.log(2), abs=1e-12)
    assert breakdown.total == pytest.approx(1.3862944, abs=1e-7)


@pytest.mark.parametrize("gamma", [0.0, 0.5, 2.0])
def test_symmetric_point_scales_with_gamma(gamma):
    breakdown = hcal(PreferenceScores(0.7, 0.7), LossParams(gamma=gamma, beta=0.0))
    assert breakdown.total == pytest.approx((1 + gamma) * math.log(2), abs=1e-12)


def test_total_worked_value():
    breakdown = hcal(PreferenceScores(-1.0, -1.5), LossParams(tau=0.1, gamma=1.0, beta=0.0))
    expected = _reference_softplus(-5.0) + _reference_softplus(-0.5)
    assert breakdown.total == pytest.approx(expected, abs=1e-9)
    assert breakdown.total == pytest.approx(0.4807923, abs=1e-7)


def test_kl_worked_value():
    scores = PreferenceScores(0.0, -0.5, 0.0, 0.0)
    q = 1 / (1 + math.exp(-0.5))
    expected = q * math.log(2 * q) + (1 - q) * math.log(2 * (1 - q))
    assert kl_term(scores) == pytest.approx(expected, abs=1e-12)
    assert kl_term(scores) == pytest.approx(0.0303, abs=1e-6)


def test_kl_is_zero_without_reference_or_when_equal():
    assert kl_term(PreferenceScores(-1.0, -2.0)) == 0.0
    assert kl_term(PreferenceScores(-1.0, -2.0, -3.0, -4.0)) == pytest.approx(0.0, abs=1e-15)


def test_decomposition_identity():
    rng = random.Random(1)
    for _ in range(200):
        scores = PreferenceScores(rng.uniform(-5, 0), rng.uniform(-5, 0), rng.uniform(-5, 0), rng.uniform(-5, 0))
        params = LossParams(tau=rng.uniform(0.05, 2), gamma=rng.uniform(0, 2), beta=rng.uniform(0, 2))
        b = hcal(scores, params)
        assert b.total == b.l_pref + params.gamma * b.l_sl + params.beta * b.l_kl
        assert b.l_pref >= 0 and b.l_sl >= 0 and b.l_kl >= 0
        assert b.grad_s_l == -b.grad_s_w


def test_translation_invariance():
    rng = random.Random(2)
    for _ in range(100):
        s_w, s_l, r_w, r_l = (rng.uniform(-4, 0) for _ in range(4))
        c, c_ref = rng.uniform(-3, 3), rng.uniform(-3, 3)
        base = hcal(PreferenceScores(s_w, s_l, r_w, r_l))
        shifted = hcal(PreferenceScores(s_w + c, s_l + c, r_w + c_ref, r_l + c_ref))
        assert shifted.l_pref == pytest.approx(base.l_pref, abs=1e-9)
        assert shifted.l_sl == pytest.approx(base.l_sl, abs=1e-9)
        assert shifted.l_kl == pytest.approx(base.l_kl, abs=1e-9)


def test_extreme_gaps_stay_finite():
    for gap in (-1e4, -800.0, 800.0, 1e4):
        b = hcal(PreferenceScores(gap, 0.0, 0.0, -gap), LossParams(tau=0.01))
        assert all(math.isfinite(v) for v in (b.l_pref, b.l_sl, b.l_kl, b.total, b.grad_s_w))


def test_grad_check_random_points():
    rng = random.Random(3)
    worst = 0.0
    for _ in range(100):
        tau = rng.uniform(0.05, 1.0)
        gap = rng.uniform(-30 * tau, 30 * tau)
        s_l = rng.uniform(-3, 0)
        with_reference = rng.random() < 0.5
        scores = PreferenceScores(
            s_l + gap,
            s_l,
            rng.uniform(-3, 0) if with_reference else None,
            rng.uniform(-3, 0) if with_reference else None,
        )
        params = LossParams(tau=tau, gamma=rng.uniform(0, 2), beta=rng.uniform(0, 2))
        worst = max(worst, grad_check(scores, params, epsilon=1e-6))
    assert worst < 1e-6


def test_grad_check_saturated_region():
    scores = PreferenceScores(50.0, 0.0)
    params = LossParams(tau=1.0, gamma=0.0, beta=0.0)
    b = hcal(scores, params)
    assert abs(b.grad_s_w) < 1e-20 and abs(b.grad_s_l) < 1e-20
    assert grad_check(scores, params, epsilon=1e-6) < 1e-6


def test_grad_check_error_shrinks_with_epsilon():
    scores = PreferenceScores(-1.0, -1.13)
    params = LossParams(tau=0.1)
    assert grad_check(scores, params, epsilon=1e-6) <= grad_check(scores, params, epsilon=1e-4)


@pytest.mark.parametrize("epsilon", [0.0, -1e-6, 1e-2])
def test_grad_check_epsilon_range(epsilon):
    with pytest.raises(ValueError):
        grad_check(PreferenceScores(0.0, 0.0), LossParams(), epsilon=epsilon)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"s_w": float("nan"), "s_l": 0.0},
        {"s_w": 0.0, "s_l": float("-inf")},
        {"s_w": 0.0, "s_l": 0.0, "s_w_ref": 0.0},
        {"s_w": 0.0, "s_l": 0.0, "s_w_ref": float("nan"), "s_l_ref": 0.0},
    ],
)
def test_invalid_scores(kwargs):
    with pytest.raises(InvalidScores):
        PreferenceScores(**kwargs)


def test_degenerate_reference():
    scores = PreferenceScores(-1.0, -2.0, 0.0, float("-inf"))
    with pytest.raises(DegenerateReference):
        hcal(scores)


@pytest.mark.parametrize("kwargs", [{"tau": 0.0}, {"tau": -1.0}, {"gamma": -0.1}, {"beta": -0.1}])
def test_invalid_params(kwargs):
    with pytest.raises(ValueError):
        LossParams(**kwargs)


def test_batch_matches_per_example_mean():
    rng = random.Random(4)
    batch = [
        PreferenceScores(rng.uniform(-3, 0), rng.uniform(-3, 0), rng.uniform(-3, 0), rng.uniform(-3, 0))
        for _ in range(10)
    ] + [PreferenceScores(-1.0, -1.5)]
    params = LossParams(tau=0.2, gamma=0.5, beta=0.3)
    mean = batch_hcal(batch, params)
    singles = [hcal(scores, params) for scores in batch]
    for name in ("l_pref", "l_sl", "l_kl", "total", "grad_s_w", "grad_s_l"):
        assert getattr(mean, name) == pytest.approx(sum(getattr(s, name) for s in singles) / len(singles), abs=1e-12)


def test_batch_needs_examples():
    with pytest.raises(InvalidScores):
        batch_hcal([])


def test_dpo_loss():
    scores = PreferenceScores(-1.0, -2.0, -1.5, -2.0)
    assert dpo_loss(scores, beta=0.1) == pytest.approx(_reference_softplus(-0.1 * 0.5), abs=1e-12)
    with pytest.raises(InvalidScores):
        dpo_loss(PreferenceScores(-1.0, -2.0))


def test_softplus_is_stable():
    assert softplus(1000.0) == 1000.0
    assert softplus(-1000.0) == 0.0


def test_scores_from_scalar_record():
    scores = scores_from_record({"s_w": -1.0, "s_l": -1.5})
    assert scores == PreferenceScores(-1.0, -1.5)


def test_scores_from_token_logprobs():
    scores = scores_from_record({"logp_w": [-1.0, -3.0], "logp_l": [-2.0], "logp_w_ref": [-1.0], "logp_l_ref": [-1.0]})
    assert scores == PreferenceScores(-2.0, -2.0, -1.0, -1.0)


@pytest.mark.parametrize(
    "record",
    [{"s_w": -1.0}, {"s_w": "high", "s_l": 0.0}, {"logp_w": [], "logp_l": [-1.0]}],
)
def test_bad_score_records(record):
    with pytest.raises(InvalidScores):
        scores_from_record(record)


def test_breakdown_document():
    document = hcal(PreferenceScores(-1.0, -1.5)).to_dict()
    assert set(document) == {"l_pref", "l_sl", "l_kl", "total", "grad_s_w", "grad_s_l"}
