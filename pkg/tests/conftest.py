"""Shared helpers: synthetic FIR records and small generated datasets."""

import numpy as np
import pytest

from impreg.dataset import Dataset, DatasetConfig, Example, generate_dataset


def make_fir_example(rng, n_samples=40, n_taps=8, snr=5.0):
    """One record from a random FIR system driven by white noise."""
    theta = rng.standard_normal(n_taps) * np.exp(-0.35 * np.arange(n_taps))
    u = rng.standard_normal(n_samples)
    ystar = np.zeros(n_samples)
    for k in range(1, n_taps + 1):
        ystar[k:] += theta[k - 1] * u[:-k]
    sigma2 = float(np.var(ystar) / snr)
    y = ystar + np.sqrt(sigma2) * rng.standard_normal(n_samples)
    return Example(u=u, y=y, theta0=theta, sigma2=sigma2, snr=snr)


def make_fir_dataset(seed, count, n_samples=40, n_taps=8, snr_range=(1.0, 10.0)):
    rng = np.random.default_rng(seed)
    examples = [
        make_fir_example(rng, n_samples, n_taps,
                         snr=rng.uniform(*snr_range))
        for _ in range(count)
    ]
    return Dataset(examples=examples, n_samples=n_samples, n_taps=n_taps, seed=seed)


@pytest.fixture(scope="session")
def small_generated_dataset():
    """A small full-pipeline dataset (sampled systems, modest order)."""
    config = DatasetConfig(order=6, n_samples=60, n_taps=24)
    return generate_dataset(24, config, seed=20260816)
