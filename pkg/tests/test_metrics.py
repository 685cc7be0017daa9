from __future__ import annotations

import math

import numpy as np
import pytest

from chfnet.errors import ShapeMismatchError, ValidationError
from chfnet.services.metrics import METRIC_NAMES, MetricsReport, evaluate, mae, nrmse, nse, r2, render_table


def test_perfect_prediction():
    measured = [1.0, 2.0, 3.0, 4.0]
    report = evaluate(measured, measured)
    assert report.nrmse == 0.0
    assert report.mae == 0.0
    assert report.nse == 1.0
    assert report.r2 == pytest.approx(1.0)
    assert report.n == 4


def test_hand_computed_values():
    measured, predicted = [2.0, 4.0, 6.0], [3.0, 4.0, 5.0]
    # squared errors 1, 0, 1; N-1 divisor; mean 4
    assert nrmse(measured, predicted) == pytest.approx(math.sqrt(2 / 2) / 4)
    assert mae(measured, predicted) == pytest.approx(2 / 3)
    assert nse(measured, predicted) == pytest.approx(1 - 2 / 8)
    assert r2(measured, predicted) == pytest.approx(1.0)


def test_r2_ignores_scale_but_nse_does_not():
    measured = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    predicted = 3.0 * measured + 10.0
    assert r2(measured, predicted) == pytest.approx(1.0)
    assert nse(measured, predicted) < 0


def test_nse_is_unbounded_below():
    assert nse([1.0, 2.0, 3.0], [100.0, -50.0, 30.0]) < -100


def test_nse_equals_r2_for_least_squares_fit():
    rng = np.random.default_rng(0)
    measured = rng.uniform(100, 5000, size=200)
    noisy = measured + rng.normal(scale=400, size=200)
    slope, intercept = np.polyfit(noisy, measured, 1)
    fitted = slope * noisy + intercept
    assert nse(measured, fitted) == pytest.approx(r2(measured, fitted), rel=1e-9)


def test_degenerate_inputs():
    with pytest.raises(ValidationError):
        nrmse([0.0, 0.0], [1.0, -1.0])
    with pytest.raises(ValidationError):
        nse([2.0, 2.0], [1.0, 3.0])
    with pytest.raises(ValidationError):
        r2([1.0, 2.0], [3.0, 3.0])
    with pytest.raises(ValidationError):
        evaluate([1.0], [1.0])
    with pytest.raises(ShapeMismatchError):
        mae([1.0, 2.0], [1.0])


def test_report_dict_roundtrip():
    report = evaluate([1.0, 2.0, 4.0], [1.5, 2.0, 3.0])
    assert MetricsReport.from_dict(report.to_dict()) == report
    assert set(METRIC_NAMES) <= set(report.to_dict())


def test_render_table_lists_every_model():
    report = evaluate([1.0, 2.0, 4.0], [1.5, 2.0, 3.0])
    text = render_table({"DCNN-base": (report, report), "DCNN-AE2": (report, report)})
    lines = text.splitlines()
    assert lines[0].startswith("Model")
    assert "NRMSE" in lines[1] and "NSE" in lines[1]
    assert lines[3].startswith("DCNN-base")
    assert lines[4].startswith("DCNN-AE2")
    assert f"{report.r2:.4f}" in lines[3]


@pytest.mark.parametrize("measured, predicted, expected", [
    ([1.0, 3.0], [2.0, 2.0], math.sqrt(2.0) / 2.0),
    ([1.0, 2.0, 3.0], [1.0, 2.0, 4.0], math.sqrt(0.5) / 2.0),
])
def test_nrmse_uses_n_minus_one(measured, predicted, expected):
    assert nrmse(measured, predicted) == pytest.approx(expected, rel=1e-9)


def test_mean_predictor_has_zero_nse():
    measured = np.array([3.0, 7.0, 1.0, 9.0])
    assert nse(measured, np.full(4, measured.mean())) == 0.0


@pytest.mark.parametrize("slope, intercept", [(2.5, -3.0), (-0.5, 100.0)])
def test_r2_is_affine_invariant(slope, intercept):
    rng = np.random.default_rng(1)
    measured = rng.uniform(0, 10, 30)
    predicted = measured + rng.normal(size=30)
    assert r2(measured, slope * predicted + intercept) == pytest.approx(r2(measured, predicted), rel=1e-9)


def test_metrics_ignore_common_permutation():
    rng = np.random.default_rng(2)
    measured, predicted = rng.uniform(1, 5, 40), rng.uniform(1, 5, 40)
    order = rng.permutation(40)
    a, b = evaluate(measured, predicted), evaluate(measured[order], predicted[order])
    for name in METRIC_NAMES:
        assert getattr(a, name) == pytest.approx(getattr(b, name), rel=1e-12)


def test_nse_worked_example():
    assert nse([1.0, 2.0, 3.0], [1.0, 2.0, 4.0]) == pytest.approx(0.5)


def test_mae_worked_example_is_symmetric():
    assert mae([1.0, 2.0, 3.0], [2.0, 2.0, 2.0]) == pytest.approx(2.0 / 3.0)
    assert mae([2.0, 2.0, 2.0], [1.0, 2.0, 3.0]) == pytest.approx(2.0 / 3.0)


def test_r2_of_perfect_anticorrelation_is_one():
    assert r2([1.0, 2.0, 3.0, 4.0], [4.0, 3.0, 2.0, 1.0]) == pytest.approx(1.0)


def test_nrmse_rejects_negative_measured_mean():
    with pytest.raises(ValidationError):
        nrmse([-1.0, -3.0], [-2.0, -2.0])
