"""Gaussian random field simulator against its plug-in covariance."""

import numpy as np
import pytest

from abcdconformal.seeding import derive_rng
from abcdconformal.simulators import grf


def test_params_validated():
    with pytest.raises(ValueError):
        grf.GrfParams(0.0)
    with pytest.raises(ValueError):
        grf.GrfParams(1.0)
    with pytest.raises(ValueError):
        grf.GrfParams(0.5, grid_size=1)


def test_prior_support():
    rng = derive_rng(0)
    draws = [grf.sample_prior(rng) for _ in range(2000)]
    assert all(0.0 < t < 1.0 for t in draws)


def test_covariance_diagonal_is_one():
    cov = grf.covariance_matrix(grf.GrfParams(0.5, grid_size=8))
    np.testing.assert_allclose(np.diag(cov), 1.0)
    assert np.all(cov <= 1.0) and np.all(cov > 0.0)


def test_field_mean_and_variance():
    params = grf.GrfParams(0.4, grid_size=16)
    rng = derive_rng(1)
    fields = np.array([grf.simulate(params, rng) for _ in range(1000)])
    # each pixel is N(0, 1): pooled mean ~ 0, pixel variance ~ 1
    se_mean = 1.0 / np.sqrt(fields.shape[0])
    pixel_means = fields.mean(axis=0)
    assert np.all(np.abs(pixel_means) < 5 * se_mean)
    pixel_vars = fields.var(axis=0)
    se_var = np.sqrt(2.0 / fields.shape[0])
    assert np.all(np.abs(pixel_vars - 1.0) < 5 * se_var)


def test_pairwise_correlation_matches_kernel():
    # plug-in covariance oracle at desk scale G=16
    g, theta = 16, 0.55
    params = grf.GrfParams(theta, grid_size=g)
    rng = derive_rng(2)
    fields = np.array([grf.simulate(params, rng) for _ in range(1000)])
    h = 5.0 / (g - 1)
    n = fields.shape[0]
    for (i1, j1), (i2, j2) in [((3, 3), (3, 4)), ((2, 2), (5, 2)), ((0, 0), (2, 2))]:
        d = h * np.hypot(i1 - i2, j1 - j2)
        expected = np.exp(-((d / theta) ** 2))
        a, b = fields[:, i1, j1], fields[:, i2, j2]
        got = float(np.mean(a * b))  # marginals have unit variance
        se = np.std(a * b) / np.sqrt(n)
        assert abs(got - expected) < 4 * se, (d, expected, got)


def test_simulation_deterministic_given_seed():
    params = grf.GrfParams(0.3, grid_size=8)
    a = grf.simulate(params, derive_rng(3))
    b = grf.simulate(params, derive_rng(3))
    np.testing.assert_array_equal(a, b)


def test_near_singular_covariance_uses_jitter():
    # theta near 1 on a fine grid: neighboring pixels almost perfectly
    # correlated; the jitter ladder must still factor it
    params = grf.GrfParams(0.999, grid_size=16)
    field = grf.simulate(params, derive_rng(4))
    assert np.all(np.isfinite(field))
    assert field.std() > 0.1
