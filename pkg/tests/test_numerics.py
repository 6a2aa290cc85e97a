"""Kernel-level checks: tempered cosine, masked softmax, and the
finite-difference oracle itself."""

import numpy as np
import pytest

from mlclab.errors import ConfigError, DomainError, OracleError
from mlclab.numerics import (
    finite_difference_gradient,
    masked_log_softmax,
    relative_error,
    tempered_cosine_backward,
    tempered_cosine_matrix,
)


class TestTemperedCosine:
    def test_identical_unit_vectors(self):
        s = tempered_cosine_matrix([[1.0, 0.0]], [[1.0, 0.0]], 1.0)
        assert s[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal_vectors(self):
        for tau in (0.1, 1.0, 3.0):
            s = tempered_cosine_matrix([[1.0, 0.0]], [[0.0, 1.0]], tau)
            assert s[0, 0] == pytest.approx(0.0, abs=1e-15)

    def test_hand_value(self):
        # cos((1,0),(1,1)) = 1/sqrt(2); divided by tau = 0.5 gives sqrt(2)
        s = tempered_cosine_matrix([[1.0, 0.0]], [[1.0, 1.0]], 0.5)
        assert s[0, 0] == pytest.approx(np.sqrt(2.0), abs=1e-12)

    def test_bounds(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(20, 5))
        b = rng.normal(size=(17, 5))
        s = tempered_cosine_matrix(a, b, 0.1)
        assert np.all(s <= 1 / 0.1 + 1e-12)
        assert np.all(s >= -1 / 0.1 - 1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(6, 4))
        b = rng.normal(size=(5, 4))
        s1 = tempered_cosine_matrix(a, b, 0.7)
        for c in (1e-3, 2.0, 1e4):
            s2 = tempered_cosine_matrix(c * a, b, 0.7)
            np.testing.assert_allclose(s1, s2, atol=1e-12)

    def test_zero_norm_row_names_index(self):
        a = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
        with pytest.raises(DomainError, match="index 1"):
            tempered_cosine_matrix(a, a, 1.0)

    def test_nonpositive_temperature(self):
        with pytest.raises(ConfigError):
            tempered_cosine_matrix([[1.0]], [[1.0]], 0.0)
        with pytest.raises(ConfigError):
            tempered_cosine_matrix([[1.0]], [[1.0]], -0.5)

    def test_backward_matches_fd(self):
        # the backward is the primitive every loss gradient routes through
        rng = np.random.default_rng(2)
        a = rng.normal(size=(5, 3))
        b = rng.normal(size=(4, 3))
        w = rng.normal(size=(5, 4))
        da, db = tempered_cosine_backward(a, b, 0.3, w)
        fa = finite_difference_gradient(
            lambda x: float(np.sum(w * tempered_cosine_matrix(x, b, 0.3))), a)
        fb = finite_difference_gradient(
            lambda x: float(np.sum(w * tempered_cosine_matrix(a, x, 0.3))), b)
        np.testing.assert_allclose(da, fa, atol=1e-9)
        np.testing.assert_allclose(db, fb, atol=1e-9)


class TestMaskedLogSoftmax:
    def test_uniform_logits(self):
        res = masked_log_softmax([[0.0, 0.0, 0.0]], np.ones((1, 3)))
        np.testing.assert_allclose(res.log_p[0], np.log(1 / 3), atol=1e-15)

    def test_symmetry_under_masking(self):
        res = masked_log_softmax([[2.5, 2.5, 2.5]], [[1, 1, 0]])
        np.testing.assert_allclose(res.sigma[0], [0.5, 0.5, 0.0], atol=1e-15)
        assert res.sigma[0, 2] == 0.0

    def test_direct_evaluation(self):
        # exp(k)/sum(exp) for logits (1, 2, 3), evaluated independently
        logits = np.array([[1.0, 2.0, 3.0]])
        e = np.exp(logits[0])
        res = masked_log_softmax(logits, np.ones((1, 3)))
        np.testing.assert_allclose(res.sigma[0], e / e.sum(), atol=1e-12)
        np.testing.assert_allclose(
            res.sigma[0], [0.09003057, 0.24472847, 0.66524096], atol=1e-8)

    def test_row_stochastic_random(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n, m = rng.integers(1, 6), rng.integers(2, 9)
            logits = rng.normal(0, 10, size=(n, m))
            mask = rng.random((n, m)) < 0.6
            mask[np.arange(n), rng.integers(0, m, size=n)] = True
            res = masked_log_softmax(logits, mask)
            np.testing.assert_allclose(res.sigma.sum(axis=1), 1.0, atol=1e-9)
            assert np.all(res.sigma[~mask] == 0.0)
            assert np.all(np.isneginf(res.log_p[~mask]))

    def test_sigma_consistent_with_log_p(self):
        rng = np.random.default_rng(4)
        logits = rng.normal(0, 5, size=(4, 7))
        mask = np.ones((4, 7))
        res = masked_log_softmax(logits, mask)
        np.testing.assert_allclose(res.sigma, np.exp(res.log_p), atol=1e-15)

    def test_extreme_logits_stable(self):
        # magnitudes seen at temperature 0.1 must not overflow
        res = masked_log_softmax([[10.0, -10.0, 9.5]], np.ones((1, 3)))
        assert np.all(np.isfinite(res.log_p))
        assert res.sigma.sum() == pytest.approx(1.0, abs=1e-12)

    def test_fully_masked_row(self):
        with pytest.raises(DomainError, match="fully-masked"):
            masked_log_softmax([[1.0, 2.0]], [[0, 0]])


class TestFiniteDifferenceGradient:
    def test_sum_of_squares(self):
        g = finite_difference_gradient(lambda x: float((x ** 2).sum()), [[3.0]])
        assert g[0, 0] == pytest.approx(6.0, abs=1e-6)

    def test_constant_function(self):
        g = finite_difference_gradient(lambda x: 7.25, np.ones((3, 2)))
        np.testing.assert_array_equal(g, np.zeros((3, 2)))

    def test_quadratic_form(self):
        # for f(x) = x^T M x the central difference is exact up to roundoff
        rng = np.random.default_rng(5)
        m = rng.normal(size=(4, 4))
        x = rng.normal(size=(4, 1))
        g = finite_difference_gradient(lambda v: float(v[:, 0] @ m @ v[:, 0]), x)
        expected = (m + m.T) @ x[:, 0]
        np.testing.assert_allclose(g[:, 0], expected, atol=1e-8)

    def test_nonfinite_evaluation(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            with pytest.raises(OracleError):
                finite_difference_gradient(lambda x: float(np.log(x[0, 0])), [[0.0]])

    def test_negative_step_rejected(self):
        with pytest.raises(ConfigError):
            finite_difference_gradient(lambda x: 0.0, [[1.0]], h=-1e-5)


def test_relative_error_floor():
    a = np.array([0.0, 1.0])
    b = np.array([1e-12, 1.0])
    err = relative_error(a, b)
    assert err[0] == pytest.approx(1e-12 / 1e-8)
    assert err[1] == 0.0
