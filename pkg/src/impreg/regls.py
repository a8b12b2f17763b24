"""FIR regression assembly and closed-form regularized estimates.

With a record of length N and an FIR model of n taps, the regressor at time t
(1-based, t = n+1 .. N) is phi(t) = (u(t-1), ..., u(t-n)).  The sufficient
statistics are R = sum phi(t) phi(t)^T and F = sum phi(t) y(t); every
estimator in the package is a function of (R, F).
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NonpositiveNoise, SequenceTooShort, SingularSystem

# Reciprocal condition number below which the regularized solve is refused.
RCOND_FLOOR = 1e-14
# Relative eigenvalue cutoff of the least-squares pseudo-inverse.
LSTSQ_CUTOFF = 1e-10


@dataclass
class RegressionData:
    """Sufficient statistics of one record: R (n x n), F (n,), equation count."""

    R: np.ndarray
    F: np.ndarray
    count: int


def regressor_matrix(u: np.ndarray, n_taps: int) -> np.ndarray:
    """Stack the delayed-input regressors as rows, one per usable time step."""
    u = np.asarray(u, dtype=float)
    n_samples = u.shape[0]
    if n_samples <= n_taps:
        raise SequenceTooShort(
            "need more than %d samples for %d taps, got %d"
            % (n_taps, n_taps, n_samples))
    idx = np.arange(n_taps, n_samples)[:, None] - np.arange(1, n_taps + 1)[None, :]
    return u[idx]


def build_regression(u: np.ndarray, y: np.ndarray, n_taps: int) -> RegressionData:
    """Accumulate R and F from one input/output record.

    R is symmetrized explicitly so downstream solvers see an exactly
    symmetric matrix regardless of floating-point accumulation order.
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.shape != y.shape:
        raise ValueError("u and y must have the same length")
    phi = regressor_matrix(u, n_taps)
    R = phi.T @ phi
    R = 0.5 * (R + R.T)
    F = phi.T @ y[n_taps:]
    return RegressionData(R=R, F=F, count=phi.shape[0])


def estimate(P: np.ndarray, rd: RegressionData) -> np.ndarray:
    """Regularized estimate theta = (P R + I)^-1 P F.

    P is the inverse regularization matrix; P = 0 gives the literal value 0
    (maximal shrinkage), not the least-squares solution.

    Raises
    ------
    SingularSystem
        If P R + I is singular beyond a reciprocal condition of 1e-14.
    """
    P = np.asarray(P, dtype=float)
    n = rd.R.shape[0]
    if P.shape != (n, n):
        raise ValueError("P must be %d x %d" % (n, n))
    M = P @ rd.R + np.eye(n)
    anorm = np.linalg.norm(M, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lu, piv = scipy.linalg.lu_factor(M)
    rcond, _ = scipy.linalg.lapack.dgecon(lu, anorm)
    if not np.isfinite(rcond) or rcond < RCOND_FLOOR:
        raise SingularSystem("P R + I is singular (rcond %.2e)" % rcond)
    return scipy.linalg.lu_solve((lu, piv), P @ rd.F)


def least_squares(rd: RegressionData) -> np.ndarray:
    """Unregularized estimate R^+ F via an eigenvalue pseudo-inverse.

    Eigenvalues below 1e-10 times the largest are treated as zero, which
    keeps the estimate finite on rank-deficient records.
    """
    evals, evecs = np.linalg.eigh(rd.R)
    top = float(evals[-1])
    if top <= 0.0:
        return np.zeros_like(rd.F)
    keep = evals > LSTSQ_CUTOFF * top
    coeffs = evecs.T @ rd.F
    coeffs = np.where(keep, coeffs / np.where(keep, evals, 1.0), 0.0)
    return evecs @ coeffs


def optimal_regularizer(theta0: np.ndarray, sigma2: float) -> np.ndarray:
    """Best-possible inverse regularization matrix for a known true response.

    The rank-one matrix theta0 theta0^T / sigma2 minimizes the expected
    squared estimation error over noise realizations.
    """
    if sigma2 <= 0:
        raise NonpositiveNoise("sigma2 must be positive, got %g" % sigma2)
    theta0 = np.asarray(theta0, dtype=float)
    return np.outer(theta0, theta0) / sigma2
