"""Relative error score, model fit score, and split reporting."""

import numpy as np
import numpy.testing as npt
import pytest

from impreg.metrics import (SNR_SPLIT, EvalReport, estimation_error,
                            evaluate_method, ls_relative_score,
                            model_fit_score)
from impreg.regls import least_squares

from conftest import make_fir_dataset


def test_estimation_error_is_squared_norm():
    assert estimation_error([1.0, 2.0], [0.0, 0.0]) == pytest.approx(5.0)


def test_score_is_mean_of_ratios():
    truths = [np.zeros(2), np.zeros(2)]
    ls = [np.array([1.0, 0.0]), np.array([1.0, 0.0])]
    # errors 0.2 and 0.4 against LS error 1.0 each
    est = [np.array([np.sqrt(0.2), 0.0]), np.array([np.sqrt(0.4), 0.0])]
    score, ratios, excluded = ls_relative_score(est, ls, truths)
    assert score == pytest.approx(0.3, rel=1e-12)
    npt.assert_allclose(ratios, [0.2, 0.4], rtol=1e-12)
    assert excluded == 0


def test_perfect_estimates_score_zero():
    truths = [np.array([1.0, -1.0]), np.array([0.5, 2.0])]
    ls = [t + 0.3 for t in truths]
    score, _, _ = ls_relative_score(list(truths), ls, truths)
    assert score == 0.0


def test_ls_against_itself_scores_one():
    rng = np.random.default_rng(0)
    truths = [rng.standard_normal(5) for _ in range(10)]
    ls = [t + rng.standard_normal(5) for t in truths]
    score, ratios, _ = ls_relative_score(ls, ls, truths)
    assert abs(score - 1.0) <= 1e-12
    npt.assert_allclose(ratios, 1.0, atol=1e-12)


def test_degenerate_baseline_excluded_and_counted():
    truths = [np.zeros(3), np.ones(3)]
    ls = [np.zeros(3), np.ones(3) * 2]  # first LS error is exactly 0
    est = [np.ones(3), np.ones(3) * 2]
    score, ratios, excluded = ls_relative_score(est, ls, truths)
    assert excluded == 1
    assert np.isnan(ratios[0])
    assert score == pytest.approx(1.0, rel=1e-12)


def test_score_scale_invariance():
    rng = np.random.default_rng(1)
    truths = [rng.standard_normal(6) for _ in range(8)]
    ls = [t + rng.standard_normal(6) for t in truths]
    est = [t + 0.5 * rng.standard_normal(6) for t in truths]
    base, _, _ = ls_relative_score(est, ls, truths)
    f = 7.3
    scaled, _, _ = ls_relative_score([f * e for e in est], [f * l for l in ls],
                                     [f * t for t in truths])
    assert abs(base - scaled) <= 1e-12


def test_fit_score_anchor_points():
    truth = np.array([1.0, 2.0, 3.0])
    perfect, _, _ = model_fit_score([truth], [truth])
    assert perfect == pytest.approx(100.0)
    constant, _, _ = model_fit_score([np.full(3, truth.mean())], [truth])
    assert constant == pytest.approx(0.0, abs=1e-12)
    # error twice the centered energy lands at -100
    denom = np.sum((truth - truth.mean()) ** 2)
    bad = truth + np.sqrt(2 * denom / 3)
    score, _, _ = model_fit_score([bad], [truth])
    assert score == pytest.approx(-100.0, rel=1e-9)


def test_fit_score_scale_invariance():
    rng = np.random.default_rng(2)
    truths = [rng.standard_normal(6) + 0.4 for _ in range(5)]
    est = [t + 0.3 * rng.standard_normal(6) for t in truths]
    base, _, _ = model_fit_score(est, truths)
    scaled, _, _ = model_fit_score([7.3 * e for e in est],
                                   [7.3 * t for t in truths])
    assert abs(base - scaled) <= 1e-12


def test_fit_score_excludes_constant_truths():
    score, fits, excluded = model_fit_score(
        [np.zeros(3), np.array([1.0, 0.0, 0.0])],
        [np.ones(3), np.array([1.0, -1.0, 0.0])])
    assert excluded == 1
    assert np.isnan(fits[0])
    assert np.isfinite(score)


def run_least_squares(ex, rd, theta_ls):
    return theta_ls


def test_evaluate_method_ls_identity():
    ds = make_fir_dataset(3, 30)
    report = evaluate_method(run_least_squares, ds, "ls")
    assert report.method == "ls"
    for value in (report.s_all, report.s_low, report.s_high):
        assert abs(value - 1.0) <= 1e-12


def test_evaluate_method_split_bookkeeping():
    ds = make_fir_dataset(4, 40)
    report = evaluate_method(run_least_squares, ds, "ls")
    n_low = sum(ex.snr < SNR_SPLIT for ex in ds.examples)
    assert report.count_low == n_low
    assert report.count_high == 40 - n_low - report.excluded_degenerate
    assert len(report.per_example) == 40
    # Split means recombine to the overall mean.
    recombined = (report.s_low * report.count_low
                  + report.s_high * report.count_high) / 40
    assert abs(recombined - report.s_all) <= 1e-12


def test_evaluate_method_survives_per_example_failure():
    ds = make_fir_dataset(5, 12)
    calls = {"n": 0}

    def flaky(ex, rd, theta_ls):
        calls["n"] += 1
        if calls["n"] == 4:
            raise np.linalg.LinAlgError("boom")
        return theta_ls

    report = evaluate_method(flaky, ds, "flaky")
    assert report.failed_examples == 1
    assert len([r for r in report.per_example if r.ratio is not None]) == 11


def test_report_json_roundtrip():
    ds = make_fir_dataset(6, 10)
    report = evaluate_method(run_least_squares, ds, "ls")
    back = EvalReport.from_json(report.to_json())
    assert back.method == report.method
    assert back.s_all == report.s_all
    assert back.count_low == report.count_low
    assert len(back.per_example) == len(report.per_example)


def test_report_csv_layout(tmp_path):
    ds = make_fir_dataset(7, 8)
    report = evaluate_method(run_least_squares, ds, "ls")
    path = tmp_path / "r.csv"
    report.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "id,snr,err_method,err_ls,ratio"
    assert len(lines) == 9
    first = lines[1].split(",")
    assert first[0] == "0"
    assert float(first[4]) == pytest.approx(1.0)
