"""Conformal scores, quantile ranks, confidence sets, coverage band."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abcdconformal.conformal import (
    CalibrationSizeError,
    ConfidenceSet,
    calibrate,
    confidence_set,
    coverage_bounds,
    mahalanobis_score,
    marginal_intervals,
)
from abcdconformal.mcdropout import DropoutPrediction, UncertaintyKind

from oracles import mahalanobis_by_solve


def test_score_zero_at_center():
    assert mahalanobis_score([1.0, 2.0], [1.0, 2.0], np.eye(2)) == 0.0


def test_score_one_dimensional():
    assert mahalanobis_score([1.0], [0.0], [[4.0]]) == pytest.approx(0.5)


def test_score_against_solve_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = rng.integers(1, 5)
        a = rng.normal(size=(d, d))
        v = a @ a.T + 0.1 * np.eye(d)
        theta, center = rng.normal(size=d), rng.normal(size=d)
        assert mahalanobis_score(theta, center, v) == pytest.approx(
            mahalanobis_by_solve(theta, center, v), rel=1e-10
        )
    assert mahalanobis_score([1.0, 1.0], [0.0, 0.0], np.eye(2)) == pytest.approx(math.sqrt(2))


def test_score_reparameterization_invariance():
    rng = np.random.default_rng(1)
    theta, center = rng.normal(size=3), rng.normal(size=3)
    a = rng.normal(size=(3, 3))
    v = a @ a.T + 0.5 * np.eye(3)
    t = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    s1 = mahalanobis_score(theta, center, v)
    s2 = mahalanobis_score(t @ theta, t @ center, t @ v @ t.T)
    assert s2 == pytest.approx(s1, rel=1e-9)


def test_score_requires_spd():
    with pytest.raises(np.linalg.LinAlgError):
        mahalanobis_score([1.0], [0.0], [[-1.0]])


def test_calibrate_rank_formula():
    scores = np.arange(1.0, 101.0)
    cal = calibrate(scores, 0.5)
    assert cal.q_hat == 51.0  # k = ceil(101 * 0.5) = 51
    rng = np.random.default_rng(2)
    scores = rng.exponential(size=1000)
    cal = calibrate(scores, 0.05)
    assert cal.q_hat == np.sort(scores)[950]  # k = ceil(1001 * 0.95) = 951


def test_calibrate_too_few_scores():
    with pytest.raises(CalibrationSizeError) as err:
        calibrate(np.arange(10.0), 0.05)
    assert "20" in str(err.value)


def test_calibrate_keeps_ties():
    cal = calibrate([1.0, 1.0, 1.0, 2.0], 0.5)
    assert cal.n_cal == 4
    assert cal.q_hat == 1.0  # k = ceil(5 * 0.5) = 3


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.5), st.floats(0.05, 0.5))
def test_quantile_monotone_in_delta(d1, d2):
    rng = np.random.default_rng(9)
    scores = rng.gamma(2.0, size=400)
    lo, hi = sorted((d1, d2))
    assert calibrate(scores, lo).q_hat >= calibrate(scores, hi).q_hat


def test_confidence_set_interval_matches_ellipsoid_1d():
    pred = DropoutPrediction(
        mean=np.array([0.0]),
        epistemic_cov=np.array([[0.5]]),
        aleatoric_diag=np.array([0.5]),
        n_passes=10,
    )
    cal = calibrate(np.linspace(0.01, 3.0, 50), 0.1, kind=UncertaintyKind.OVERALL)
    cs = confidence_set(pred, UncertaintyKind.OVERALL, cal, ridge=0.0)
    lo, hi = cs.interval()
    assert lo == pytest.approx(-cs.q_hat)
    assert hi == pytest.approx(cs.q_hat)
    for theta in np.linspace(lo - 0.5, hi + 0.5, 41):
        assert cs.contains([theta]) == (lo <= theta <= hi)


def test_confidence_set_membership_boundary():
    cs = ConfidenceSet(
        center=np.zeros(2), shape_matrix=np.diag([1.0, 4.0]), q_hat=1.0, ndim=2
    )
    assert cs.contains([0.0, 2.0])       # boundary, closed set
    assert not cs.contains([0.0, 2.01])


def test_confidence_set_degenerate_radius():
    cs = ConfidenceSet(center=np.array([1.0]), shape_matrix=np.eye(1), q_hat=0.0, ndim=1)
    assert cs.contains([1.0])
    assert not cs.contains([1.0 + 1e-9])
    assert cs.interval() == (1.0, 1.0)


def test_kind_mismatch_rejected():
    pred = DropoutPrediction(
        mean=np.zeros(1),
        epistemic_cov=np.eye(1),
        aleatoric_diag=np.ones(1),
        n_passes=5,
    )
    cal = calibrate(np.linspace(0.1, 2.0, 30), 0.2, kind=UncertaintyKind.EPISTEMIC)
    with pytest.raises(ValueError):
        confidence_set(pred, UncertaintyKind.OVERALL, cal)


def test_scale_equivariance_of_set():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(2, 2))
    v = a @ a.T + np.eye(2)
    center = rng.normal(size=2)
    thetas = rng.normal(size=(40, 2))
    scores = np.array([mahalanobis_score(t, center, v) for t in thetas])
    c = 7.3
    scores_scaled = np.array([mahalanobis_score(t, center, c * v) for t in thetas])
    np.testing.assert_allclose(scores_scaled, scores / math.sqrt(c), rtol=1e-10)
    cal = calibrate(scores, 0.2)
    cal_scaled = calibrate(scores_scaled, 0.2)
    assert cal_scaled.q_hat == pytest.approx(cal.q_hat / math.sqrt(c), rel=1e-10)
    set_a = ConfidenceSet(center=center, shape_matrix=v, q_hat=cal.q_hat, ndim=2)
    set_b = ConfidenceSet(center=center, shape_matrix=c * v, q_hat=cal_scaled.q_hat, ndim=2)
    for t in rng.normal(size=(100, 2)) * 2:
        assert set_a.contains(t) == set_b.contains(t)


def test_marginal_intervals_componentwise_oracle():
    # the 2-D marginal pipeline must equal two independent 1-D pipelines
    rng = np.random.default_rng(8)
    pred = DropoutPrediction(
        mean=np.array([0.5, -1.0]),
        epistemic_cov=np.diag([0.25, 1.0]),
        aleatoric_diag=np.array([0.75, 1.0]),
        n_passes=10,
    )
    cal_scores = rng.exponential(size=(2, 60))
    cals = [calibrate(cal_scores[j], 0.1) for j in range(2)]
    both = marginal_intervals(pred, UncertaintyKind.OVERALL, cals, ridge=0.0)
    for j in range(2):
        v_jj = pred.overall_cov[j, j]
        half = cals[j].q_hat * math.sqrt(v_jj)
        assert both[j, 0] == pytest.approx(pred.mean[j] - half)
        assert both[j, 1] == pytest.approx(pred.mean[j] + half)


def test_marginal_intervals_unit_variance():
    pred = DropoutPrediction(
        mean=np.array([2.0, -3.0]),
        epistemic_cov=0.5 * np.eye(2),
        aleatoric_diag=np.array([0.5, 0.5]),
        n_passes=10,
    )
    cals = [
        calibrate(np.full(50, 1.96), 0.1) for _ in range(2)
    ]
    ivs = marginal_intervals(pred, UncertaintyKind.OVERALL, cals, ridge=0.0)
    np.testing.assert_allclose(ivs[:, 1] - ivs[:, 0], 2 * 1.96, rtol=1e-12)


def test_coverage_bounds_formula():
    lo, hi = coverage_bounds(1000, 0.05)
    assert lo == pytest.approx(0.95)
    assert hi == pytest.approx(0.95 + 1.0 / 1001)
    assert coverage_bounds(1, 0.5) == (0.5, 1.0)
    assert coverage_bounds(999, 0.05)[1] == pytest.approx(0.951)


def test_exchangeability_coverage_property():
    # i.i.d. continuous scores: empirical coverage of {score <= q_hat}
    # falls inside the finite-sample band up to binomial noise
    n_cal, n_test, reps, delta = 200, 200, 200, 0.1
    rng = np.random.default_rng(123)
    covered = []
    for _ in range(reps):
        scores = rng.weibull(1.5, size=n_cal + n_test)
        cal = calibrate(scores[:n_cal], delta)
        covered.append(np.mean(scores[n_cal:] <= cal.q_hat))
    mean_cov = float(np.mean(covered))
    lo, hi = coverage_bounds(n_cal, delta)
    se = math.sqrt(delta * (1 - delta) / (reps * n_test))
    assert lo - 3 * se <= mean_cov <= hi + 3 * se
