"""Empirical-Bayes inverse regularization with an exponential-decay kernel.

The true response is modeled as a zero-mean Gaussian vector with covariance
K_ij = c * lam^max(i, j) (decaying variance, correlated neighbours).  The
kernel hyperparameters and the noise variance are chosen by maximizing the
marginal likelihood of the observed outputs, and the fitted kernel divided by
the fitted noise variance is the inverse regularization matrix fed to
``regls.estimate``: the resulting estimate is the posterior mean.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

from . import regls
from .errors import NumericalFailure, OptimizationFailed

# Search box (log10 c, lam, log10 sigma2) shared by the grid and the
# simplex refinement, which is clipped to the same region.
C_BOUNDS = (1e-4, 1e4)
LAM_BOUNDS = (0.5, 0.999)
SIGMA2_BOUNDS = (1e-6, 1e2)
GRID_POINTS = 8
_JITTERS = (0.0, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class GPHyper:
    """Kernel scale c, decay rate lam in (0, 1), noise variance sigma2."""

    c: float
    lam: float
    sigma2: float

    def __post_init__(self):
        if not (self.c > 0 and np.isfinite(self.c)):
            raise ValueError("c must be positive and finite")
        if not (0.0 < self.lam < 1.0):
            raise ValueError("lam must lie strictly inside (0, 1)")
        if not (self.sigma2 > 0 and np.isfinite(self.sigma2)):
            raise ValueError("sigma2 must be positive and finite")


def kernel_matrix(hyper: GPHyper, n_taps: int) -> np.ndarray:
    """Prior covariance K_ij = c * lam^max(i, j) with 1-based indices."""
    k = np.arange(1, n_taps + 1)
    return hyper.c * hyper.lam ** np.maximum(k[:, None], k[None, :])


def _chol_jittered(M: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, escalating a diagonal jitter before giving up."""
    mean_diag = float(np.mean(np.diag(M)))
    for jitter in _JITTERS:
        try:
            return scipy.linalg.cholesky(M + jitter * mean_diag * np.eye(M.shape[0]),
                                         lower=True)
        except scipy.linalg.LinAlgError:
            continue
    raise NumericalFailure("Cholesky failed after jitter escalation")


class _MLData:
    """Per-record quantities reused across likelihood evaluations."""

    def __init__(self, phi: np.ndarray, y_used: np.ndarray):
        phi = np.asarray(phi, dtype=float)
        y_used = np.asarray(y_used, dtype=float)
        if phi.ndim != 2 or y_used.shape != (phi.shape[0],):
            raise ValueError("phi must be (m, n) and y_used length m")
        self.phi = phi
        self.m, self.n = phi.shape
        self.G = phi.T @ phi
        self.v = phi.T @ y_used
        self.yty = float(y_used @ y_used)
        self.y = y_used


def _loglik(data: _MLData, hyper: GPHyper) -> float:
    K = kernel_matrix(hyper, data.n)
    s2 = hyper.sigma2
    m, n = data.m, data.n
    if m > n:
        # Low-rank path: the m x m output covariance sigma2 I + Phi K Phi^T
        # is reduced to the n x n capacitance sigma2 I + L^T (Phi^T Phi) L.
        L = _chol_jittered(K)
        C = s2 * np.eye(n) + L.T @ data.G @ L
        Lc = _chol_jittered(C)
        b = L.T @ data.v
        z = scipy.linalg.solve_triangular(Lc, b, lower=True)
        quad = (data.yty - float(z @ z)) / s2
        logdet = 2.0 * float(np.sum(np.log(np.diag(Lc)))) + (m - n) * np.log(s2)
    else:
        cov = s2 * np.eye(m) + data.phi @ K @ data.phi.T
        Lc = _chol_jittered(cov)
        z = scipy.linalg.solve_triangular(Lc, data.y, lower=True)
        quad = float(z @ z)
        logdet = 2.0 * float(np.sum(np.log(np.diag(Lc))))
    return -0.5 * (m * np.log(2.0 * np.pi) + logdet + quad)


def marginal_loglik(hyper: GPHyper, phi: np.ndarray, y_used: np.ndarray) -> float:
    """Log marginal likelihood of y_used under the kernel prior plus noise."""
    return _loglik(_MLData(phi, y_used), hyper)


def _residual_variance(data: _MLData) -> float:
    theta = regls.least_squares(
        regls.RegressionData(R=data.G, F=data.v, count=data.m))
    rss = data.yty - 2.0 * float(theta @ data.v) + float(theta @ data.G @ theta)
    return rss / data.m


def fit_empirical_bayes(phi: np.ndarray, y_used: np.ndarray):
    """Fit hyperparameters by marginal-likelihood maximization.

    A coarse grid over the search box picks a starting point (the grid gains
    an extra noise-variance candidate at the least-squares residual level),
    then a Nelder-Mead refinement polishes it in (log c, lam, log sigma2)
    with evaluations clipped to the box.

    Returns
    -------
    (P, hyper)
        P = K(hyper) / hyper.sigma2, the fitted inverse regularization
        matrix in the units of the supplied data, and the fitted GPHyper.
    """
    phi = np.asarray(phi, dtype=float)
    y_used = np.asarray(y_used, dtype=float)
    if not (np.isfinite(phi).all() and np.isfinite(y_used).all()):
        raise OptimizationFailed("observations contain non-finite values")
    data = _MLData(phi, y_used)

    def objective(z):
        z = _clip_to_box(z)
        try:
            return -_loglik(data, _hyper_from_z(z))
        except NumericalFailure:
            return np.inf

    c_grid = np.logspace(np.log10(C_BOUNDS[0]), np.log10(C_BOUNDS[1]), GRID_POINTS)
    lam_grid = np.linspace(LAM_BOUNDS[0], LAM_BOUNDS[1], GRID_POINTS)
    s2_grid = list(np.logspace(np.log10(SIGMA2_BOUNDS[0]),
                               np.log10(SIGMA2_BOUNDS[1]), GRID_POINTS))
    resid = _residual_variance(data)
    if np.isfinite(resid) and resid > 0:
        s2_grid.append(float(np.clip(resid, *SIGMA2_BOUNDS)))

    best_z, best_f = None, np.inf
    for c in c_grid:
        for lam in lam_grid:
            for s2 in s2_grid:
                z = np.array([np.log10(c), lam, np.log10(s2)])
                f = objective(z)
                if f < best_f:
                    best_z, best_f = z, f
    if best_z is None or not np.isfinite(best_f):
        raise OptimizationFailed("no finite marginal likelihood in the search box")

    result = scipy.optimize.minimize(
        objective, best_z, method="Nelder-Mead",
        options={"xatol": 1e-4, "fatol": np.inf, "maxfev": 200})
    z = _clip_to_box(result.x) if result.fun < best_f else best_z
    hyper = _hyper_from_z(z)
    return kernel_matrix(hyper, data.n) / hyper.sigma2, hyper


def _hyper_from_z(z):
    return GPHyper(c=10.0 ** z[0], lam=float(z[1]), sigma2=10.0 ** z[2])


def _clip_to_box(z):
    return np.array([
        np.clip(z[0], np.log10(C_BOUNDS[0]), np.log10(C_BOUNDS[1])),
        np.clip(z[1], LAM_BOUNDS[0], LAM_BOUNDS[1]),
        np.clip(z[2], np.log10(SIGMA2_BOUNDS[0]), np.log10(SIGMA2_BOUNDS[1])),
    ])
