"""Random stable continuous-time SISO systems and their sampled FIR truncations.

Systems are drawn in a structured state-space form (orthogonally similar to a
block-diagonal matrix of stable 2x2 rotation blocks and negative reals), then
sampled with a zero-order hold at a rate tied to the -3 dB bandwidth.  The
truncated impulse response of the sampled system is the ground truth that the
estimators in the rest of the package try to recover.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegenerateGain, NumericalFailure

# Magnitude range for pole real parts, |Re| log-uniform in [POLE_RE_MIN, POLE_RE_MAX].
POLE_RE_MIN = 0.05
POLE_RE_MAX = 10.0
# Imaginary part drawn uniform in [0, POLE_IM_FACTOR * |Re|].
POLE_IM_FACTOR = 3.0
# Resample a candidate system when more than this fraction of impulse-response
# energy falls beyond the FIR truncation.
TAIL_ENERGY_LIMIT = 0.01

_DC_GAIN_FLOOR = 1e-12
_BANDWIDTH_GRID = (1e-4, 1e4, 400)
_BISECT_RELTOL = 1e-9


@dataclass(frozen=True)
class ContinuousStateSpace:
    """Continuous-time SISO state space dx/dt = A x + B u, y = C x + D u.

    B and C are stored as 1-D arrays of length ``order``; D is a scalar.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float = 0.0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float).reshape(-1)
        C = np.asarray(self.C, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if B.shape[0] != A.shape[0] or C.shape[0] != A.shape[0]:
            raise ValueError("B and C must have length equal to the order")
        if not (np.isfinite(A).all() and np.isfinite(B).all()
                and np.isfinite(C).all() and np.isfinite(self.D)):
            raise ValueError("state-space matrices must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", float(self.D))

    @property
    def order(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class DiscreteStateSpace:
    """Discrete-time SISO state space x+ = A x + B u, y = C x + D u."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float
    sample_time: float

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float).reshape(-1)
        C = np.asarray(self.C, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if B.shape[0] != A.shape[0] or C.shape[0] != A.shape[0]:
            raise ValueError("B and C must have length equal to the order")
        if self.sample_time <= 0:
            raise ValueError("sample_time must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", float(self.D))

    @property
    def order(self) -> int:
        return self.A.shape[0]


def is_stable(sys) -> bool:
    """True when all poles are strictly stable (left half-plane, or unit disc)."""
    eig = np.linalg.eigvals(sys.A)
    if isinstance(sys, DiscreteStateSpace):
        return bool(np.max(np.abs(eig)) < 1.0)
    return bool(np.max(eig.real) < 0.0)


def sample_system(order: int, rng: np.random.Generator) -> ContinuousStateSpace:
    """Draw a random stable continuous-time SISO system.

    Parameters
    ----------
    order : int
        State dimension, at least 1.
    rng : numpy.random.Generator
        Source of randomness.

    Returns
    -------
    ContinuousStateSpace
        Stable system with B, C standard normal and D = 0.  Pole real parts
        have magnitude log-uniform in [0.05, 10]; complex pairs get an
        imaginary part uniform in [0, 3|Re|].
    """
    if order < 1:
        raise ValueError("order must be at least 1")
    n_pairs = order // 2
    n_real = order - 2 * n_pairs
    blocks = []
    for _ in range(n_pairs):
        re = -_log_uniform(rng, POLE_RE_MIN, POLE_RE_MAX)
        im = rng.uniform(0.0, POLE_IM_FACTOR) * abs(re)
        blocks.append(np.array([[re, im], [-im, re]]))
    for _ in range(n_real):
        blocks.append(np.array([[-_log_uniform(rng, POLE_RE_MIN, POLE_RE_MAX)]]))
    core = scipy.linalg.block_diag(*blocks)
    q, _ = np.linalg.qr(rng.standard_normal((order, order)))
    A = q @ core @ q.T
    B = rng.standard_normal(order)
    C = rng.standard_normal(order)
    sys = ContinuousStateSpace(A=A, B=B, C=C, D=0.0)
    # Construction guarantees stability; the check guards numerical surprises.
    if not is_stable(sys):
        return sample_system(order, rng)
    return sys


def _log_uniform(rng, lo, hi):
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def _freq_mags(sys: ContinuousStateSpace, omegas: np.ndarray) -> np.ndarray:
    """|G(j omega)| at each frequency, via eigendecomposition when A allows it."""
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    lam, V = np.linalg.eig(A)
    # Defective A (repeated poles) makes the eigenvector solve meaningless;
    # verify the reconstruction before trusting the fast path.
    try:
        Vinv = np.linalg.inv(V)
        ok = np.linalg.norm((V * lam) @ Vinv - A) <= 1e-8 * max(np.linalg.norm(A), 1.0)
    except np.linalg.LinAlgError:
        ok = False
    if ok:
        w = Vinv @ B.astype(complex)
        cv = C.astype(complex) @ V
        terms = 1.0 / (1j * omegas[:, None] - lam[None, :])
        return np.abs(terms @ (cv * w) + D)
    eye = np.eye(sys.order)
    out = np.empty(omegas.shape[0])
    for i, om in enumerate(omegas):
        out[i] = abs(C @ np.linalg.solve(1j * om * eye - A, B) + D)
    return out


def dc_gain(sys: ContinuousStateSpace) -> float:
    return float(sys.C @ np.linalg.solve(-sys.A, sys.B) + sys.D)


def bandwidth(sys: ContinuousStateSpace) -> float:
    """Smallest frequency (rad/s) where gain first drops to |G(j0)|/sqrt(2).

    Brackets the crossing on a log-spaced grid over [1e-4, 1e4] rad/s and
    refines by bisection to a relative tolerance of 1e-9.

    Raises
    ------
    DegenerateGain
        If |G(j0)| is below 1e-12 or no crossing exists inside the grid.
    """
    g0 = abs(dc_gain(sys))
    if g0 < _DC_GAIN_FLOOR:
        raise DegenerateGain("DC gain magnitude below 1e-12")
    target = g0 / np.sqrt(2.0)
    lo_w, hi_w, n_pts = _BANDWIDTH_GRID
    omegas = np.logspace(np.log10(lo_w), np.log10(hi_w), n_pts)
    mags = _freq_mags(sys, omegas)
    below = mags < target
    if not below.any():
        raise DegenerateGain("no -3 dB crossing in [1e-4, 1e4] rad/s")
    i = int(np.argmax(below))
    lo = 0.0 if i == 0 else float(omegas[i - 1])
    hi = float(omegas[i])
    while hi - lo > _BISECT_RELTOL * hi:
        mid = 0.5 * (lo + hi)
        if _freq_mags(sys, np.array([mid]))[0] < target:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def sampling_interval(bandwidth_rad_s: float) -> float:
    """Sample period from the rate rule f = 3 * (bandwidth * 2 pi).

    The bandwidth value enters in rad/s, reproducing the source recipe
    literally (its 2 pi factor included); the result oversamples the -3 dB
    frequency by about 6 pi, the regime this benchmark is calibrated to.
    """
    return 1.0 / (3.0 * (bandwidth_rad_s * 2.0 * np.pi))


def matrix_exponential(M: np.ndarray) -> np.ndarray:
    """Matrix exponential expm(M) (scaling-and-squaring)."""
    E = scipy.linalg.expm(np.asarray(M, dtype=float))
    if not np.isfinite(E).all():
        raise NumericalFailure("matrix exponential produced non-finite entries")
    return E


def discretize_zoh(sys: ContinuousStateSpace, sample_time: float) -> DiscreteStateSpace:
    """Zero-order-hold discretization through one augmented matrix exponential.

    exp([[A*T, B*T], [0, 0]]) contains Ad in the top-left block and Bd in the
    top-right column, which handles singular A without a special case.
    """
    if sample_time <= 0:
        raise ValueError("sample_time must be positive")
    n = sys.order
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = sys.A * sample_time
    M[:n, n] = sys.B * sample_time
    E = matrix_exponential(M)
    return DiscreteStateSpace(A=E[:n, :n], B=E[:n, n], C=sys.C.copy(),
                              D=sys.D, sample_time=sample_time)


def impulse_response(dsys: DiscreteStateSpace, n: int) -> np.ndarray:
    """First n impulse-response coefficients g_k = C A^(k-1) B, k = 1..n."""
    g = np.empty(n)
    x = dsys.B.copy()
    for k in range(n):
        g[k] = dsys.C @ x
        x = dsys.A @ x
    return g


def tail_energy_fraction(dsys: DiscreteStateSpace, n: int) -> float:
    """Fraction of impulse-response energy beyond the first n coefficients.

    Uses the exact Gramian identity: with X solving X = A X A^T + B B^T, the
    total energy sum_k g_k^2 equals C X C^T and the tail beyond n equals
    c_n^T X c_n with c_n = (A^T)^n C^T.
    """
    if not is_stable(dsys):
        raise ValueError("tail energy is defined for stable systems only")
    X = scipy.linalg.solve_discrete_lyapunov(dsys.A, np.outer(dsys.B, dsys.B))
    total = float(dsys.C @ X @ dsys.C)
    c = dsys.C.copy()
    for _ in range(n):
        c = dsys.A.T @ c
    tail = float(c @ X @ c)
    if total <= 0.0:
        raise DegenerateGain("impulse response has no energy")
    return max(tail / total, 0.0)


def draw_fir_system(order: int, n_taps: int, rng: np.random.Generator,
                    tail_limit: float = TAIL_ENERGY_LIMIT, max_tries: int = 1000):
    """Draw a sampled system whose length-``n_taps`` FIR truncation is faithful.

    Repeats sample -> bandwidth -> zero-order hold until the truncation tail
    holds less than ``tail_limit`` of the impulse-response energy.  Returns
    ``(dsys, theta0)`` with ``theta0`` the truncated impulse response.
    """
    for _ in range(max_tries):
        csys = sample_system(order, rng)
        try:
            bw = bandwidth(csys)
        except DegenerateGain:
            continue
        dsys = discretize_zoh(csys, sampling_interval(bw))
        if not is_stable(dsys):
            continue
        if tail_energy_fraction(dsys, n_taps) > tail_limit:
            continue
        return dsys, impulse_response(dsys, n_taps)
    raise NumericalFailure("could not draw an acceptable system in %d tries" % max_tries)
