"""Evaluation metrics for measured vs predicted CHF.

NRMSE keeps the N-1 divisor, R^2 is the squared Pearson correlation and NSE is
reported unclamped (it is unbounded below).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np

from chfnet.errors import ShapeMismatchError, ValidationError

METRIC_NAMES = ("nrmse", "mae", "r2", "nse")


def _pair(measured: Sequence[float], predicted: Sequence[float], minimum: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    m = np.asarray(measured, dtype=np.float64).reshape(-1)
    p = np.asarray(predicted, dtype=np.float64).reshape(-1)
    if m.size != p.size:
        raise ShapeMismatchError(f"Measured has {m.size} values, predicted has {p.size}.")
    if m.size < minimum:
        raise ValidationError(f"Need at least {minimum} paired values, got {m.size}.")
    return m, p


def nrmse(measured: Sequence[float], predicted: Sequence[float]) -> float:
    m, p = _pair(measured, predicted, minimum=2)
    mean = m.mean()
    if mean <= 0:
        raise ValidationError(f"NRMSE needs a positive measured mean, got {mean}.")
    return float(np.sqrt(np.sum((m - p) ** 2) / (m.size - 1)) / mean)


def mae(measured: Sequence[float], predicted: Sequence[float]) -> float:
    m, p = _pair(measured, predicted)
    return float(np.mean(np.abs(m - p)))


def nse(measured: Sequence[float], predicted: Sequence[float]) -> float:
    m, p = _pair(measured, predicted, minimum=2)
    denominator = np.sum((m - m.mean()) ** 2)
    if denominator == 0:
        raise ValidationError("NSE is undefined for a constant measured series.")
    return float(1.0 - np.sum((m - p) ** 2) / denominator)


def r2(measured: Sequence[float], predicted: Sequence[float]) -> float:
    m, p = _pair(measured, predicted, minimum=2)
    dm = m - m.mean()
    dp = p - p.mean()
    ss_m = np.sum(dm ** 2)
    ss_p = np.sum(dp ** 2)
    if ss_m == 0 or ss_p == 0:
        raise ValidationError("R^2 is undefined when either series is constant.")
    r = np.sum(dm * dp) / np.sqrt(ss_m * ss_p)
    return float(min(r * r, 1.0))


@dataclass(frozen=True)
class MetricsReport:
    nrmse: float
    mae: float
    r2: float
    nse: float
    n: int

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Mapping[str, float]) -> "MetricsReport":
        return cls(
            nrmse=float(payload["nrmse"]),
            mae=float(payload["mae"]),
            r2=float(payload["r2"]),
            nse=float(payload["nse"]),
            n=int(payload.get("n", 0)),
        )


def evaluate(measured: Sequence[float], predicted: Sequence[float]) -> MetricsReport:
    m, p = _pair(measured, predicted, minimum=2)
    return MetricsReport(nrmse=nrmse(m, p), mae=mae(m, p), r2=r2(m, p), nse=nse(m, p), n=int(m.size))


def render_table(rows: Mapping[str, Tuple[MetricsReport, MetricsReport]]) -> str:
    """Aligned text table: one row per model, training then testing metrics."""
    header_top = f"{'Model':<14}| {'Training':^43} | {'Testing':^43}"
    columns = "".join(f"{name.upper():>11}" for name in METRIC_NAMES)
    header = f"{'':<14}|{columns}  |{columns}"
    lines = [header_top, header, "-" * len(header)]
    for name, (train_report, test_report) in rows.items():
        train_cells = "".join(_cell(getattr(train_report, metric)) for metric in METRIC_NAMES)
        test_cells = "".join(_cell(getattr(test_report, metric)) for metric in METRIC_NAMES)
        lines.append(f"{name:<14}|{train_cells}  |{test_cells}")
    return "\n".join(lines) + "\n"


def _cell(value: float) -> str:
    return f"{value:>11.4f}"
