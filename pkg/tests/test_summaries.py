"""Summary statistics against brute-force oracles."""

import numpy as np
import pytest

from abcdconformal.seeding import derive_rng
from abcdconformal.summaries import (
    EmptyBinError,
    lv_raw_distance,
    ma2_summaries,
    morans_i,
    semivariogram,
    semivariogram_max_distance,
)

from oracles import morans_i_dense, semivariogram_pairs


def test_ma2_summaries_forced_arithmetic():
    assert ma2_summaries([1.0, 1.0, 1.0]) == (2.0, 1.0)
    assert ma2_summaries(np.zeros(10)) == (0.0, 0.0)
    assert ma2_summaries([1.0, -1.0, 1.0, -1.0]) == (-3.0, 2.0)
    with pytest.raises(ValueError):
        ma2_summaries([1.0, 2.0])


def test_morans_checkerboard_is_minus_one():
    g = 8
    field = np.indices((g, g)).sum(axis=0) % 2 * 2.0 - 1.0
    assert morans_i(field, 1) == pytest.approx(-1.0)


def test_morans_matches_dense_weights_oracle():
    rng = derive_rng(0)
    for lag in (1, 2, 3):
        field = rng.normal(size=(7, 7))
        assert morans_i(field, lag) == pytest.approx(morans_i_dense(field, lag), rel=1e-12)


def test_morans_null_expectation():
    # i.i.d. field: E[I] = -1/(G^2 - 1)
    g, reps = 8, 1000
    rng = derive_rng(1)
    vals = np.array([morans_i(rng.normal(size=(g, g)), 1) for _ in range(reps)])
    se = vals.std() / np.sqrt(reps)
    assert abs(vals.mean() + 1.0 / (g * g - 1)) < 4 * se


def test_morans_constant_field_rejected():
    with pytest.raises(ValueError):
        morans_i(np.ones((5, 5)), 1)
    with pytest.raises(ValueError):
        morans_i(np.zeros((4, 4)), 4)


def test_semivariogram_constant_field_zero():
    out = semivariogram(np.full((6, 6), 3.3), max_distance=4.0, n_bins=3)
    np.testing.assert_allclose(out, 0.0)


def test_semivariogram_affine_equivariance():
    rng = derive_rng(2)
    field = rng.normal(size=(8, 8))
    base = semivariogram(field, 5.0, 4)
    scaled = semivariogram(3.0 * field + 7.0, 5.0, 4)
    np.testing.assert_allclose(scaled, 9.0 * base, rtol=1e-12)


def test_semivariogram_matches_pair_enumeration():
    rng = derive_rng(3)
    field = rng.normal(size=(4, 4))
    got = semivariogram(field, 3.0, 3)
    want = semivariogram_pairs(field, 3.0, 3)
    np.testing.assert_allclose(got, want, rtol=1e-12)
    field = rng.normal(size=(9, 9))
    got = semivariogram(field, 6.0, 5)
    want = semivariogram_pairs(field, 6.0, 5)
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_semivariogram_empty_bin_reported():
    with pytest.raises(EmptyBinError) as err:
        semivariogram(np.arange(16.0).reshape(4, 4), max_distance=4.0, n_bins=15)
    assert err.value.bin_index == 0


def test_max_distance_convention():
    assert semivariogram_max_distance(100) == 20.0
    assert semivariogram_max_distance(32) == 15.0
    # the floor keeps all 15 bins populated: bin width >= 1 pixel
    assert semivariogram_max_distance(32) / 15 >= 1.0


def test_lv_raw_distance():
    a = np.arange(38).reshape(2, 19)
    assert lv_raw_distance(a, a) == 0.0
    b = a.copy()
    b[0, 4] += 3
    assert lv_raw_distance(a, b) == 9.0
    rng = derive_rng(4)
    a = rng.integers(0, 300, size=(2, 19))
    b = rng.integers(0, 300, size=(2, 19))
    total = 0.0
    for i in range(19):
        total += (a[0, i] - b[0, i]) ** 2 + (a[1, i] - b[1, i]) ** 2
    assert lv_raw_distance(a, b) == total
    with pytest.raises(ValueError):
        lv_raw_distance(a, b[:, :10])
