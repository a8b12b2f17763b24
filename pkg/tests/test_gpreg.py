"""Stable-spline kernel, marginal likelihood, and empirical Bayes fitting."""

import numpy as np
import numpy.testing as npt
import pytest

from impreg.errors import OptimizationFailed
from impreg.gpreg import (GPHyper, _chol_jittered, fit_empirical_bayes,
                          kernel_matrix, marginal_loglik)


def test_kernel_values():
    K = kernel_matrix(GPHyper(c=2.0, lam=0.5, sigma2=1.0), 3)
    expected = 2.0 * np.array([
        [0.5, 0.25, 0.125],
        [0.25, 0.25, 0.125],
        [0.125, 0.125, 0.125],
    ])
    npt.assert_allclose(K, expected, rtol=1e-14)
    assert np.linalg.eigvalsh(K).min() > 0


def test_kernel_decay_encodes_stability():
    K = kernel_matrix(GPHyper(c=1.0, lam=0.8, sigma2=1.0), 20)
    d = np.diag(K)
    assert (np.diff(d) < 0).all()
    npt.assert_allclose(d, 0.8 ** np.arange(1, 21), rtol=1e-12)


def test_scalar_marginal_likelihood_closed_form():
    # One observation y0 = phi * theta + e with phi = 1: marginally
    # y0 ~ N(0, K11 + sigma2).
    hyper = GPHyper(c=1.3, lam=0.7, sigma2=0.4)
    k11 = 1.3 * 0.7
    y0 = 0.9
    expected = -0.5 * (np.log(2 * np.pi * (k11 + 0.4)) + y0 ** 2 / (k11 + 0.4))
    got = marginal_loglik(hyper, np.array([[1.0]]), np.array([y0]))
    npt.assert_allclose(got, expected, rtol=1e-12)


def full_covariance_loglik(hyper, phi, y):
    """Direct dense-covariance evaluation, used as an oracle."""
    m = phi.shape[0]
    K = kernel_matrix(hyper, phi.shape[1])
    cov = hyper.sigma2 * np.eye(m) + phi @ K @ phi.T
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    return -0.5 * (m * np.log(2 * np.pi) + logdet + y @ np.linalg.solve(cov, y))


def test_marginal_loglik_matches_dense_covariance():
    rng = np.random.default_rng(0)
    for m, n in ((20, 5), (7, 10), (40, 12)):
        phi = rng.standard_normal((m, n))
        y = rng.standard_normal(m)
        for hyper in (GPHyper(1.0, 0.8, 0.5), GPHyper(30.0, 0.95, 0.01),
                      GPHyper(0.01, 0.6, 2.0)):
            npt.assert_allclose(marginal_loglik(hyper, phi, y),
                                full_covariance_loglik(hyper, phi, y),
                                rtol=1e-8)


def test_fit_returns_kernel_over_noise():
    rng = np.random.default_rng(1)
    phi = rng.standard_normal((40, 8))
    theta = 0.7 ** np.arange(1, 9)
    y = phi @ theta + 0.05 * rng.standard_normal(40)
    P, hyper = fit_empirical_bayes(phi, y)
    npt.assert_allclose(P, kernel_matrix(hyper, 8) / hyper.sigma2, rtol=1e-12)
    assert np.linalg.eigvalsh(P).min() > 0


def test_fit_improves_on_grid_corners():
    rng = np.random.default_rng(2)
    phi = rng.standard_normal((60, 10))
    theta = 0.8 ** np.arange(1, 11) * rng.standard_normal(10)
    y = phi @ theta + 0.1 * rng.standard_normal(60)
    _, hyper = fit_empirical_bayes(phi, y)
    best = marginal_loglik(hyper, phi, y)
    for corner in (GPHyper(1e-4, 0.5, 1e-6), GPHyper(1e4, 0.999, 1e2)):
        assert best >= marginal_loglik(corner, phi, y) - 1e-9


def test_decay_rate_recovered_from_matched_draws():
    """Median fitted decay over independent draws brackets the truth."""
    truth = GPHyper(c=1.0, lam=0.8, sigma2=0.05)
    K = kernel_matrix(truth, 12)
    L = np.linalg.cholesky(K + 1e-12 * np.eye(12))
    rng = np.random.default_rng(3)
    fitted = []
    for _ in range(20):
        theta = L @ rng.standard_normal(12)
        phi = rng.standard_normal((80, 12))
        y = phi @ theta + np.sqrt(truth.sigma2) * rng.standard_normal(80)
        _, hyper = fit_empirical_bayes(phi, y)
        fitted.append(hyper.lam)
    med = np.median(fitted)
    assert 0.6 <= med <= 0.95


def test_fit_rejects_nonfinite_observations():
    phi = np.ones((5, 2))
    y = np.array([1.0, np.nan, 0.0, 0.0, 0.0])
    with pytest.raises(OptimizationFailed):
        fit_empirical_bayes(phi, y)


def test_jittered_cholesky_handles_singular_matrices():
    L = _chol_jittered(np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert np.isfinite(L).all()
    npt.assert_allclose(L @ L.T, [[1.0, 1.0], [1.0, 1.0]], atol=1e-6)


def test_hyper_validation():
    with pytest.raises(ValueError):
        GPHyper(c=-1.0, lam=0.8, sigma2=1.0)
    with pytest.raises(ValueError):
        GPHyper(c=1.0, lam=1.5, sigma2=1.0)
    with pytest.raises(ValueError):
        GPHyper(c=1.0, lam=0.8, sigma2=0.0)
