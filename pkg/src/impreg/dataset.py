"""Simulated input/output records and their normalization and serialization.

An example is one simulated experiment: a white-noise input, the noisy output
of a randomly drawn sampled system, the true truncated impulse response, the
noise variance and the drawn signal-to-noise ratio.  Datasets are stored raw;
normalization is a separate, invertible step applied before estimation.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import sysgen
from ._binio import CrcReader, CrcWriter
from .errors import DegenerateSequence, EmptyDataset

DATASET_MAGIC = b"IRDS"
DATASET_VERSION = 1
STATS_MAGIC = b"IRTS"
STATS_VERSION = 1

# Variance floor below which a signal cannot be scale-normalized.
VARIANCE_FLOOR = 1e-12


@dataclass
class Example:
    """One simulated record: input u, noisy output y, truth and noise level."""

    u: np.ndarray
    y: np.ndarray
    theta0: np.ndarray
    sigma2: float
    snr: float

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.theta0 = np.asarray(self.theta0, dtype=float)
        if self.u.shape != self.y.shape or self.u.ndim != 1:
            raise ValueError("u and y must be 1-D arrays of equal length")
        if not (np.isfinite(self.u).all() and np.isfinite(self.y).all()
                and np.isfinite(self.theta0).all()):
            raise ValueError("example contains non-finite values")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.snr <= 0:
            raise ValueError("snr must be positive")


@dataclass
class DatasetConfig:
    """Generation knobs: system order, record length, FIR length, SNR range."""

    order: int = 30
    n_samples: int = 125
    n_taps: int = 50
    snr_lo: float = 1.0
    snr_hi: float = 10.0


@dataclass
class Dataset:
    examples: list = field(default_factory=list)
    n_samples: int = 0
    n_taps: int = 0
    seed: int = 0
    version: int = DATASET_VERSION

    @property
    def count(self) -> int:
        return len(self.examples)

    def validate(self):
        for i, ex in enumerate(self.examples):
            if ex.u.shape[0] != self.n_samples or ex.theta0.shape[0] != self.n_taps:
                raise ValueError("example %d does not match dataset dimensions" % i)


@dataclass
class ScaleRecord:
    """Affine normalization applied to one example (means and scale factors)."""

    u_mean: float
    u_scale: float
    y_mean: float
    y_scale: float

    @property
    def theta_factor(self) -> float:
        """Multiplier taking a raw-unit response to normalized units."""
        return self.u_scale / self.y_scale


@dataclass
class ThetaStats:
    """Per-coefficient mean and standard deviation of normalized responses."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean and std must be 1-D arrays of equal length")
        if (self.std <= 0).any():
            raise ValueError("std entries must be positive")


def simulate_io(dsys, n_samples: int, snr: float, rng: np.random.Generator):
    """Simulate one record from a sampled system.

    Draws a unit-variance white-noise input, runs the state recursion from a
    zero initial state, then adds white Gaussian noise with variance
    var(y*) / snr where y* is the noise-free output.

    Returns ``(u, y, sigma2)``.
    """
    if snr <= 0:
        raise ValueError("snr must be positive")
    u = rng.standard_normal(n_samples)
    ystar = np.empty(n_samples)
    x = np.zeros(dsys.order)
    for t in range(n_samples):
        ystar[t] = dsys.C @ x + dsys.D * u[t]
        x = dsys.A @ x + dsys.B * u[t]
    noise_free_var = float(np.var(ystar))
    if noise_free_var <= VARIANCE_FLOOR:
        raise DegenerateSequence("noise-free output has no variance")
    sigma2 = noise_free_var / snr
    y = ystar + np.sqrt(sigma2) * rng.standard_normal(n_samples)
    return u, y, sigma2


def _generate_one(args):
    seed, index, config = args
    # Per-example streams keyed by (seed, index) make the result independent
    # of worker count and assembly order.
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))
    dsys, theta0 = sysgen.draw_fir_system(config.order, config.n_taps, rng)
    snr = rng.uniform(config.snr_lo, config.snr_hi)
    u, y, sigma2 = simulate_io(dsys, config.n_samples, snr, rng)
    return Example(u=u, y=y, theta0=theta0, sigma2=sigma2, snr=snr)


def generate_dataset(count: int, config: DatasetConfig | None = None,
                     seed: int = 0, workers: int = 1) -> Dataset:
    """Generate ``count`` independent examples.

    Parameters
    ----------
    count : int
        Number of examples.
    config : DatasetConfig, optional
        Generation knobs; defaults match the standard benchmark setup.
    seed : int
        Base seed recorded in the dataset; example ``i`` uses the derived
        stream ``SeedSequence(seed, spawn_key=(i,))``.
    workers : int
        Process count for generation.  The result is identical for any value.
    """
    if config is None:
        config = DatasetConfig()
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    jobs = [(seed, i, config) for i in range(count)]
    if workers > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            examples = list(pool.map(_generate_one, jobs, chunksize=64))
    else:
        examples = [_generate_one(job) for job in jobs]
    return Dataset(examples=examples, n_samples=config.n_samples,
                   n_taps=config.n_taps, seed=seed)


def normalize_example(ex: Example):
    """Return a zero-mean, unit-scale copy of the example plus its ScaleRecord.

    u and y are standardized with their own (population) statistics; the true
    response and noise variance are mapped to the same units:
    theta0' = theta0 * s_u / s_y and sigma2' = sigma2 / var(y).
    """
    u_mean, y_mean = float(np.mean(ex.u)), float(np.mean(ex.y))
    u_scale, y_scale = float(np.std(ex.u)), float(np.std(ex.y))
    if u_scale < np.sqrt(VARIANCE_FLOOR) or y_scale < np.sqrt(VARIANCE_FLOOR):
        raise DegenerateSequence("signal variance too small to normalize")
    scale = ScaleRecord(u_mean=u_mean, u_scale=u_scale, y_mean=y_mean, y_scale=y_scale)
    normed = Example(
        u=(ex.u - u_mean) / u_scale,
        y=(ex.y - y_mean) / y_scale,
        theta0=ex.theta0 * scale.theta_factor,
        sigma2=ex.sigma2 / y_scale**2,
        snr=ex.snr,
    )
    return normed, scale


def normalize_dataset(ds: Dataset):
    """Normalize every example; returns ``(Dataset, list[ScaleRecord])``."""
    normed, scales = [], []
    for ex in ds.examples:
        nex, sc = normalize_example(ex)
        normed.append(nex)
        scales.append(sc)
    return replace(ds, examples=normed), scales


def denormalize_theta(theta_norm: np.ndarray, scale: ScaleRecord) -> np.ndarray:
    """Map a response estimated in normalized units back to raw input units."""
    return theta_norm / scale.theta_factor


def compute_theta_stats(ds: Dataset) -> ThetaStats:
    """Per-index mean/std of the true responses across a (normalized) dataset.

    Standard deviations are population-convention and floored at 1e-12.
    """
    if ds.count == 0:
        raise EmptyDataset("cannot compute statistics of an empty dataset")
    thetas = np.stack([ex.theta0 for ex in ds.examples])
    return ThetaStats(mean=thetas.mean(axis=0),
                      std=np.maximum(thetas.std(axis=0), 1e-12))


def save_dataset(ds: Dataset, path):
    ds.validate()
    with open(path, "wb") as fh:
        w = CrcWriter(fh)
        w.write(DATASET_MAGIC)
        w.pack("B", DATASET_VERSION)
        w.pack("II", ds.n_samples, ds.n_taps)
        w.pack("QQ", ds.count, ds.seed)
        for ex in ds.examples:
            w.pack("dd", ex.snr, ex.sigma2)
            w.write_array(ex.u)
            w.write_array(ex.y)
            w.write_array(ex.theta0)
        w.write_crc()


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        r = CrcReader(fh)
        r.expect_magic(DATASET_MAGIC, DATASET_VERSION)
        n_samples, n_taps = r.unpack("II")
        count, seed = r.unpack("QQ")
        examples = []
        for _ in range(count):
            snr, sigma2 = r.unpack("dd")
            u = r.read_array(n_samples)
            y = r.read_array(n_samples)
            theta0 = r.read_array(n_taps)
            examples.append(Example(u=u, y=y, theta0=theta0, sigma2=sigma2, snr=snr))
        r.check_crc()
    return Dataset(examples=examples, n_samples=n_samples, n_taps=n_taps,
                   seed=seed, version=DATASET_VERSION)


def save_theta_stats(stats: ThetaStats, path):
    with open(path, "wb") as fh:
        w = CrcWriter(fh)
        w.write(STATS_MAGIC)
        w.pack("B", STATS_VERSION)
        w.pack("I", stats.mean.shape[0])
        w.write_array(stats.mean)
        w.write_array(stats.std)


def load_theta_stats(path) -> ThetaStats:
    with open(path, "rb") as fh:
        r = CrcReader(fh)
        r.expect_magic(STATS_MAGIC, STATS_VERSION)
        (n,) = r.unpack("I")
        mean = r.read_array(n)
        std = r.read_array(n)
    return ThetaStats(mean=mean, std=std)
