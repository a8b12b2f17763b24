"""Evaluation scores relative to least squares, with SNR-split reporting.

The primary score of a method is the mean over examples of the ratio
``||theta_hat - theta0||^2 / ||theta_hat_LS - theta0||^2`` (1 means "no
better than least squares", 0 is perfect).  A secondary model-fit score
reports ``100 * (1 - error / ||theta0 - mean(theta0)||^2)`` averaged the
same way.  Both are reported overall and split at SNR 5.5.
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import regls
from .dataset import Dataset

log = logging.getLogger(__name__)

SNR_SPLIT = 5.5
# Below this squared-error floor a denominator is treated as degenerate and
# the example is excluded from means (and counted) instead of poisoning them.
DENOMINATOR_FLOOR = 1e-20


@dataclass
class ExampleScore:
    id: int
    snr: float
    err_method: float
    err_ls: float
    ratio: float


@dataclass
class EvalReport:
    method: str
    s_all: float
    s_low: float
    s_high: float
    fit_all: float
    fit_low: float
    fit_high: float
    count_low: int
    count_high: int
    excluded_degenerate: int
    excluded_constant_truth: int
    failed_examples: int
    per_example: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        data = json.loads(text)
        data["per_example"] = [ExampleScore(**r) for r in data["per_example"]]
        return cls(**data)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "snr", "err_method", "err_ls", "ratio"])
            for r in self.per_example:
                ratio = "" if r.ratio is None else "%.17g" % r.ratio
                writer.writerow([r.id, "%.17g" % r.snr, "%.17g" % r.err_method,
                                 "%.17g" % r.err_ls, ratio])


def ls_relative_score(estimates, ls_estimates, truths):
    """Mean error ratio against the least-squares baseline.

    Returns ``(score, ratios, n_excluded)``; degenerate baseline errors
    (below 1e-20) yield nan ratios, are excluded from the mean and counted.
    """
    ratios = np.full(len(truths), np.nan)
    excluded = 0
    for i, (th, th_ls, th0) in enumerate(zip(estimates, ls_estimates, truths)):
        err_ls = estimation_error(th_ls, th0)
        if err_ls < DENOMINATOR_FLOOR:
            log.warning("example %d: degenerate least-squares error %.3g, excluded",
                        i, err_ls)
            excluded += 1
            continue
        ratios[i] = estimation_error(th, th0) / err_ls
    valid = ratios[np.isfinite(ratios)]
    score = float(valid.mean()) if valid.size else np.nan
    return score, ratios, excluded


def model_fit_score(estimates, truths):
    """Mean of 100 * (1 - error / centered-truth energy); 100 is perfect.

    The centering subtracts each example's scalar mean coefficient.  Constant
    truths make the denominator zero; those examples are excluded and counted.
    """
    fits = np.full(len(truths), np.nan)
    excluded = 0
    for i, (th, th0) in enumerate(zip(estimates, truths)):
        th0 = np.asarray(th0, dtype=float)
        denom = float(np.sum((th0 - th0.mean()) ** 2))
        if denom < DENOMINATOR_FLOOR:
            log.warning("example %d: constant true response, excluded from fit score", i)
            excluded += 1
            continue
        fits[i] = 100.0 * (1.0 - estimation_error(th, th0) / denom)
    valid = fits[np.isfinite(fits)]
    score = float(valid.mean()) if valid.size else np.nan
    return score, fits, excluded


def estimation_error(theta_hat, theta0) -> float:
    d = np.asarray(theta_hat, dtype=float) - np.asarray(theta0, dtype=float)
    return float(d @ d)


def evaluate_method(method_fn, val_ds: Dataset, method_name: str) -> EvalReport:
    """Score one method over a normalized dataset.

    Parameters
    ----------
    method_fn : callable(example, rd, theta_ls) -> theta_hat
        Produces the method's estimate for one normalized example given its
        regression statistics and the least-squares baseline estimate.
    val_ds : Dataset
        Normalized evaluation set.
    method_name : str
        Label recorded in the report.

    Per-example failures are logged, excluded from every mean and counted;
    the sweep never aborts because of one example.
    """
    n = val_ds.n_taps
    estimates, ls_estimates, truths, snrs, kept_ids = [], [], [], [], []
    failed = 0
    for i, ex in enumerate(val_ds.examples):
        rd = regls.build_regression(ex.u, ex.y, n)
        theta_ls = regls.least_squares(rd)
        try:
            theta = method_fn(ex, rd, theta_ls)
        except Exception:
            log.warning("method %s failed on example %d", method_name, i, exc_info=True)
            failed += 1
            continue
        estimates.append(theta)
        ls_estimates.append(theta_ls)
        truths.append(ex.theta0)
        snrs.append(ex.snr)
        kept_ids.append(i)

    _, ratios, excl_s = ls_relative_score(estimates, ls_estimates, truths)
    _, fits, excl_f = model_fit_score(estimates, truths)
    snrs = np.array(snrs)
    low = snrs < SNR_SPLIT

    def mean_over(values, sel):
        vals = values[sel & np.isfinite(values)]
        return float(vals.mean()) if vals.size else np.nan

    per_example = [
        ExampleScore(id=kept_ids[i], snr=float(snrs[i]),
                     err_method=estimation_error(estimates[i], truths[i]),
                     err_ls=estimation_error(ls_estimates[i], truths[i]),
                     ratio=float(ratios[i]) if np.isfinite(ratios[i]) else None)
        for i in range(len(kept_ids))
    ]
    return EvalReport(
        method=method_name,
        s_all=mean_over(ratios, np.ones_like(low)),
        s_low=mean_over(ratios, low),
        s_high=mean_over(ratios, ~low),
        fit_all=mean_over(fits, np.ones_like(low)),
        fit_low=mean_over(fits, low),
        fit_high=mean_over(fits, ~low),
        count_low=int(low.sum()),
        count_high=int((~low).sum()),
        excluded_degenerate=excl_s,
        excluded_constant_truth=excl_f,
        failed_examples=failed,
        per_example=per_example,
    )
