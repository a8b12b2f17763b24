"""Regression statistics and the regularized least-squares estimator."""

import numpy as np
import numpy.testing as npt
import pytest

from impreg.errors import NonpositiveNoise, SequenceTooShort, SingularSystem
from impreg.regls import (build_regression, estimate, least_squares,
                          optimal_regularizer, regressor_matrix)


def random_regression(rng, n=6, rows=40):
    u = rng.standard_normal(rows)
    y = rng.standard_normal(rows)
    return build_regression(u, y, n)


def test_two_term_hand_sum():
    # N=3, n=1: the regressor visits u(1) and u(2), so R = 1 + 4 and
    # F = 1*y(2) + 2*y(3).
    rd = build_regression(np.array([1.0, 2.0, 3.0]), np.array([0.0, 1.0, 1.0]), 1)
    npt.assert_allclose(rd.R, [[5.0]])
    npt.assert_allclose(rd.F, [3.0])
    assert rd.count == 2


def test_zero_input_gives_zero_statistics():
    rd = build_regression(np.zeros(20), np.zeros(20), 4)
    npt.assert_array_equal(rd.R, np.zeros((4, 4)))
    npt.assert_array_equal(rd.F, np.zeros(4))


def test_unit_impulse_regressor_pattern():
    n, N = 50, 125
    u = np.zeros(N)
    u[0] = 1.0
    y = np.arange(N, dtype=float)
    rd = build_regression(u, y, n)
    # Only the regressor at t = n+1 sees the impulse, in its last slot.
    expected_R = np.zeros((n, n))
    expected_R[n - 1, n - 1] = 1.0
    npt.assert_array_equal(rd.R, expected_R)
    expected_F = np.zeros(n)
    expected_F[n - 1] = y[n]  # y(n+1) in 1-based time
    npt.assert_array_equal(rd.F, expected_F)


def test_regressor_matrix_rows_match_lagged_input():
    rng = np.random.default_rng(0)
    u = rng.standard_normal(12)
    phi = regressor_matrix(u, 3)
    assert phi.shape == (9, 3)
    # Row for t=4 (1-based) is (u(3), u(2), u(1)).
    npt.assert_array_equal(phi[0], u[2::-1])
    npt.assert_array_equal(phi[-1], u[10:7:-1])


def test_too_short_sequence_raises():
    with pytest.raises(SequenceTooShort):
        build_regression(np.ones(5), np.ones(5), 5)


def test_symmetry_and_psd_of_R():
    rng = np.random.default_rng(1)
    for _ in range(20):
        rd = random_regression(rng)
        npt.assert_allclose(rd.R, rd.R.T, atol=1e-12)
        assert np.linalg.eigvalsh(rd.R).min() >= -1e-10 * np.trace(rd.R)


def test_zero_P_gives_zero_estimate():
    rng = np.random.default_rng(2)
    rd = random_regression(rng)
    npt.assert_array_equal(estimate(np.zeros((6, 6)), rd), np.zeros(6))


def test_ridge_limit_approaches_least_squares():
    rng = np.random.default_rng(3)
    rd = random_regression(rng, n=5, rows=60)
    target = least_squares(rd)
    errs = [np.linalg.norm(estimate(c * np.eye(5), rd) - target)
            for c in (1e3, 1e6, 1e9)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] <= 1e-6 * np.linalg.norm(target)


def test_estimate_satisfies_normal_equations():
    rng = np.random.default_rng(4)
    for _ in range(10):
        rd = random_regression(rng)
        A = rng.standard_normal((6, 6))
        P = A @ A.T
        theta = estimate(P, rd)
        lhs = (P @ rd.R + np.eye(6)) @ theta
        rhs = P @ rd.F
        assert np.linalg.norm(lhs - rhs) <= 1e-9 * max(np.linalg.norm(rhs), 1.0)


def test_singular_solve_is_reported():
    # P R + I = 0 for P = -R^{-1} - R^{-1} ... simplest 1-d case: P=[[-1]], R=[[1]].
    rd = build_regression(np.array([1.0, 1.0]), np.array([0.0, 1.0]), 1)
    assert rd.R[0, 0] == 1.0
    with pytest.raises(SingularSystem):
        estimate(np.array([[-1.0]]), rd)


def test_least_squares_identity_R():
    rd_like = build_regression(np.ones(3), np.ones(3), 1)
    rd_like.R[:] = np.eye(1)
    rd_like.F[:] = [0.7]
    npt.assert_allclose(least_squares(rd_like), [0.7])


def test_least_squares_minimum_norm_on_rank_deficient_R():
    rd = build_regression(np.ones(4), np.ones(4), 2)
    rd.R[:] = np.diag([2.0, 0.0])
    rd.F[:] = [4.0, 0.0]
    npt.assert_allclose(least_squares(rd), [2.0, 0.0], atol=1e-12)


def test_least_squares_residual_small_for_full_rank():
    rng = np.random.default_rng(5)
    for _ in range(10):
        rd = random_regression(rng, n=8, rows=80)
        theta = least_squares(rd)
        assert (np.linalg.norm(rd.R @ theta - rd.F)
                <= 1e-9 * np.linalg.norm(rd.F))


def test_least_squares_scale_equivariance():
    rng = np.random.default_rng(6)
    u = rng.standard_normal(50)
    y = rng.standard_normal(50)
    alpha, beta = 2.0, 3.0
    base = least_squares(build_regression(u, y, 5))
    scaled = least_squares(build_regression(alpha * u, beta * y, 5))
    npt.assert_allclose(scaled, (beta / alpha) * base, atol=1e-10)


def test_optimal_regularizer_values():
    e1 = np.zeros(4)
    e1[0] = 1.0
    npt.assert_array_equal(optimal_regularizer(e1, 1.0), np.outer(e1, e1))
    theta = np.array([1.0, -2.0, 0.5])
    P = optimal_regularizer(theta, 1.0)
    npt.assert_allclose(optimal_regularizer(2 * theta, 1.0), 4 * P)
    npt.assert_allclose(optimal_regularizer(theta, 4.0), P / 4)


def test_optimal_regularizer_rejects_bad_noise():
    with pytest.raises(NonpositiveNoise):
        optimal_regularizer(np.ones(3), 0.0)
    with pytest.raises(NonpositiveNoise):
        optimal_regularizer(np.ones(3), -1.0)


def test_oracle_recovers_direction_at_high_snr():
    # Noise-free data: the oracle estimate lies along theta0 and converges
    # to it as the noise parameter shrinks.
    rng = np.random.default_rng(7)
    theta0 = rng.standard_normal(6)
    u = rng.standard_normal(200)
    y = np.zeros(200)
    for k in range(1, 7):
        y[k:] += theta0[k - 1] * u[:-k]
    rd = build_regression(u, y, 6)
    # The solve's conditioning scales with 1/sigma2, so the noise parameter
    # cannot be pushed arbitrarily small without losing digits.
    theta = estimate(optimal_regularizer(theta0, 1e-6), rd)
    npt.assert_allclose(theta, theta0, rtol=1e-5)
    cos = theta @ theta0 / (np.linalg.norm(theta) * np.linalg.norm(theta0))
    assert cos > 1 - 1e-8
