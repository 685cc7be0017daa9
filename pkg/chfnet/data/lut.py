"""The 2006 CHF look-up table: ingestion, trilinear interpolation and diameter correction."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from chfnet.errors import AxisOrderError, GridIncompleteError, LutFormatError, OutOfRangeError, ValidationError

logger = logging.getLogger(__name__)


PRESSURE_COLUMN = "pressure_mpa"
MASS_FLUX_COLUMN = "mass_flux_kg_m2s"
QUALITY_COLUMN = "quality"
CHF_COLUMN = "chf_kw_m2"
LUT_COLUMNS = (PRESSURE_COLUMN, MASS_FLUX_COLUMN, QUALITY_COLUMN, CHF_COLUMN)
BASE_FEATURES = (PRESSURE_COLUMN, MASS_FLUX_COLUMN, QUALITY_COLUMN)

REFERENCE_DIAMETER_MM = 8.0

# Minimum spans every ingested table has to cover.
REQUIRED_COVERAGE: Dict[str, Tuple[float, float]] = {
    PRESSURE_COLUMN: (0.1, 21.0),
    MASS_FLUX_COLUMN: (0.0, 8000.0),
    QUALITY_COLUMN: (-0.5, 1.0),
}

# Published axes of the 2006 table: 15 x 21 x 23 = 7245 nodes.
LUT_2006_AXES: Dict[str, Tuple[float, ...]] = {
    PRESSURE_COLUMN: (0.1, 0.3, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0, 21.0),
    MASS_FLUX_COLUMN: (
        0.0, 50.0, 100.0, 300.0, 500.0, 750.0, 1000.0, 1500.0, 2000.0, 2500.0, 3000.0,
        3500.0, 4000.0, 4500.0, 5000.0, 5500.0, 6000.0, 6500.0, 7000.0, 7500.0, 8000.0,
    ),
    QUALITY_COLUMN: (
        -0.5, -0.4, -0.3, -0.2, -0.15, -0.1, -0.05, 0.0, 0.05, 0.1, 0.15, 0.2,
        0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0,
    ),
}

# Descriptive statistics of the flattened table as published (min, max, mean, sd, cv).
PUBLISHED_STATS: Dict[str, Dict[str, float]] = {
    PRESSURE_COLUMN: {"min": 0.100, "max": 21.0, "mean": 8.660, "sd": 7.414, "cv": 0.856},
    MASS_FLUX_COLUMN: {"min": 0.0, "max": 8000.0, "mean": 3295.238, "sd": 2642.460, "cv": 0.802},
    QUALITY_COLUMN: {"min": -0.500, "max": 1.0, "mean": 0.220, "sd": 0.403, "cv": 1.834},
    CHF_COLUMN: {"min": 0.0, "max": 39744.0, "mean": 3868.244, "sd": 5419.593, "cv": 1.401},
}

REFERENCE_SAMPLE_COUNTS = (7245, 7225)

LutSource = Union[str, Path, TextIO]


@dataclass(frozen=True)
class LutGrid:
    pressures: np.ndarray
    mass_fluxes: np.ndarray
    qualities: np.ndarray
    chf_values: np.ndarray

    def __post_init__(self) -> None:
        axes = {}
        for name, values in zip(BASE_FEATURES, (self.pressures, self.mass_fluxes, self.qualities)):
            axis = np.array(values, dtype=np.float64)
            if axis.ndim != 1 or axis.size < 2:
                raise AxisOrderError(f"Axis {name} needs at least 2 entries, got shape {axis.shape}.")
            if not np.all(np.isfinite(axis)):
                raise AxisOrderError(f"Axis {name} contains non-finite values.")
            if not np.all(np.diff(axis) > 0):
                raise AxisOrderError(f"Axis {name} must be strictly increasing.")
            axis.setflags(write=False)
            axes[name] = axis
        chf = np.array(self.chf_values, dtype=np.float64)
        expected = tuple(axis.size for axis in axes.values())
        if chf.shape != expected:
            raise ValidationError(f"CHF array shape {chf.shape} does not match axis lengths {expected}.")
        if not np.all(np.isfinite(chf)):
            raise ValidationError("CHF values must be finite.")
        if np.any(chf < 0):
            raise ValidationError("CHF values must be non-negative.")
        chf.setflags(write=False)
        object.__setattr__(self, "pressures", axes[PRESSURE_COLUMN])
        object.__setattr__(self, "mass_fluxes", axes[MASS_FLUX_COLUMN])
        object.__setattr__(self, "qualities", axes[QUALITY_COLUMN])
        object.__setattr__(self, "chf_values", chf)

    @property
    def axes(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.pressures, self.mass_fluxes, self.qualities

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.chf_values.shape  # type: ignore[return-value]

    @property
    def size(self) -> int:
        return int(self.chf_values.size)

    def check_coverage(self) -> None:
        for name, axis in zip(BASE_FEATURES, self.axes):
            low, high = REQUIRED_COVERAGE[name]
            if axis[0] > low or axis[-1] < high:
                raise ValidationError(
                    f"Axis {name} spans [{axis[0]}, {axis[-1]}] but must cover at least [{low}, {high}]."
                )


@dataclass(frozen=True)
class QueryPoint:
    pressure: float
    mass_flux: float
    quality: float
    diameter: float = REFERENCE_DIAMETER_MM

    def __post_init__(self) -> None:
        for name in ("pressure", "mass_flux", "quality", "diameter"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"Query {name} must be finite.")
        if self.diameter <= 0:
            raise ValidationError(f"Diameter must be positive, got {self.diameter}.")


def load_lut(source: LutSource, require_full_coverage: bool = True) -> LutGrid:
    """Read the long CSV layout (one row per grid node, any order)."""
    frame = _read_csv(source)
    if tuple(frame.columns) != LUT_COLUMNS:
        raise LutFormatError(f"Expected header {','.join(LUT_COLUMNS)}, got {','.join(map(str, frame.columns))}.")
    frame = _coerce_numeric(frame)
    grid = _grid_from_frame(frame)
    if require_full_coverage:
        grid.check_coverage()
    logger.info("Loaded CHF look-up table with shape %s (%d nodes)", grid.shape, grid.size)
    return grid


def load_lut_wide(source: LutSource, require_full_coverage: bool = True) -> LutGrid:
    """Read the published layout: one row per (pressure, mass flux), one column per quality."""
    frame = _read_csv(source)
    header = [str(column) for column in frame.columns]
    if header[:2] != [PRESSURE_COLUMN, MASS_FLUX_COLUMN] or len(header) < 4:
        raise LutFormatError(
            f"Wide layout needs {PRESSURE_COLUMN},{MASS_FLUX_COLUMN} followed by at least two quality columns."
        )
    try:
        quality_labels = {column: float(column) for column in header[2:]}
    except ValueError as exc:
        raise LutFormatError(f"Quality column headers must be numbers: {exc}") from exc
    long = frame.melt(
        id_vars=[PRESSURE_COLUMN, MASS_FLUX_COLUMN],
        var_name=QUALITY_COLUMN,
        value_name=CHF_COLUMN,
    )
    long[QUALITY_COLUMN] = long[QUALITY_COLUMN].map(lambda label: quality_labels[str(label)])
    grid = _grid_from_frame(_coerce_numeric(long[list(LUT_COLUMNS)]))
    if require_full_coverage:
        grid.check_coverage()
    logger.info("Converted wide CHF table with shape %s", grid.shape)
    return grid


def write_lut(grid: LutGrid, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(dict(zip(LUT_COLUMNS, _node_columns(grid))))
    frame.to_csv(path, index=False, encoding="utf-8")
    logger.info("Wrote %d LUT rows to %s", len(frame), path)


def interpolate(grid: LutGrid, p: float, g: float, x: float) -> float:
    """Trilinear interpolation over the eight enclosing grid corners; closed intervals, no extrapolation."""
    (ip, tp), (ig, tg), (ix, tx) = (
        _bracket(grid.pressures, p, PRESSURE_COLUMN),
        _bracket(grid.mass_fluxes, g, MASS_FLUX_COLUMN),
        _bracket(grid.qualities, x, QUALITY_COLUMN),
    )
    cube = grid.chf_values[ip:ip + 2, ig:ig + 2, ix:ix + 2]
    # quality, then mass flux, then pressure
    face = cube[:, :, 0] * (1.0 - tx) + cube[:, :, 1] * tx
    edge = face[:, 0] * (1.0 - tg) + face[:, 1] * tg
    return float(edge[0] * (1.0 - tp) + edge[1] * tp)


def interpolate_many(grid: LutGrid, points: Sequence[Sequence[float]]) -> np.ndarray:
    array = np.asarray(points, dtype=np.float64)
    if array.ndim != 2 or array.shape[1] != 3:
        raise ValidationError(f"Expected an (n, 3) array of (p, g, x) queries, got shape {array.shape}.")
    (ip, tp), (ig, tg), (ix, tx) = (
        _bracket_many(grid.pressures, array[:, 0], PRESSURE_COLUMN),
        _bracket_many(grid.mass_fluxes, array[:, 1], MASS_FLUX_COLUMN),
        _bracket_many(grid.qualities, array[:, 2], QUALITY_COLUMN),
    )
    v = grid.chf_values
    # same operation order as interpolate(), so results match it bit for bit
    face = [
        [v[ip + a, ig + b, ix] * (1.0 - tx) + v[ip + a, ig + b, ix + 1] * tx for b in (0, 1)]
        for a in (0, 1)
    ]
    edge = [face[a][0] * (1.0 - tg) + face[a][1] * tg for a in (0, 1)]
    return edge[0] * (1.0 - tp) + edge[1] * tp


def correct_diameter(chf_8mm: float, d_real: float) -> float:
    """Rescale an 8 mm table value to a tube of diameter ``d_real`` [mm]: CHF_8mm * (D/8)^0.5."""
    if not math.isfinite(d_real) or d_real <= 0:
        raise ValidationError(f"Tube diameter must be positive, got {d_real}.")
    if not math.isfinite(chf_8mm) or chf_8mm < 0:
        raise ValidationError(f"CHF must be a non-negative number, got {chf_8mm}.")
    return chf_8mm * math.sqrt(d_real / REFERENCE_DIAMETER_MM)


def lookup(grid: LutGrid, query: QueryPoint) -> float:
    return correct_diameter(interpolate(grid, query.pressure, query.mass_flux, query.quality), query.diameter)


def flatten(grid: LutGrid) -> "Dataset":
    from chfnet.data.dataset import Dataset

    pressures, mass_fluxes, qualities, chf = _node_columns(grid)
    features = np.column_stack([pressures, mass_fluxes, qualities])
    dataset = Dataset(features=features, targets=chf, feature_names=BASE_FEATURES)
    count = len(dataset)
    if count not in REFERENCE_SAMPLE_COUNTS:
        logger.warning("Flattened table has %d samples; reference counts are %s", count, REFERENCE_SAMPLE_COUNTS)
    else:
        logger.info("Flattened table into %d samples", count)
    return dataset


def _node_columns(grid: LutGrid) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    # indexing="ij" + C-order ravel: pressure outermost, quality innermost
    mesh = np.meshgrid(*grid.axes, indexing="ij")
    return mesh[0].ravel(), mesh[1].ravel(), mesh[2].ravel(), grid.chf_values.ravel().copy()


def _bracket(axis: np.ndarray, value: float, name: str) -> Tuple[int, float]:
    if not math.isfinite(value) or value < axis[0] or value > axis[-1]:
        raise OutOfRangeError(f"{name}={value} lies outside the table span [{axis[0]}, {axis[-1]}].")
    index = int(np.searchsorted(axis, value, side="right")) - 1
    index = min(index, axis.size - 2)
    low, high = axis[index], axis[index + 1]
    return index, float((value - low) / (high - low))


def _bracket_many(axis: np.ndarray, values: np.ndarray, name: str) -> Tuple[np.ndarray, np.ndarray]:
    outside = ~np.isfinite(values) | (values < axis[0]) | (values > axis[-1])
    if outside.any():
        value = float(values[np.flatnonzero(outside)[0]])
        raise OutOfRangeError(f"{name}={value} lies outside the table span [{axis[0]}, {axis[-1]}].")
    index = np.minimum(np.searchsorted(axis, values, side="right") - 1, axis.size - 2)
    low, high = axis[index], axis[index + 1]
    return index, (values - low) / (high - low)


def _read_csv(source: LutSource) -> pd.DataFrame:
    if isinstance(source, (str, Path)) and not Path(source).exists():
        raise ValidationError(f"LUT file {source} does not exist.")
    try:
        return pd.read_csv(source, encoding="utf-8") if isinstance(source, (str, Path)) else pd.read_csv(source)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise LutFormatError(f"Could not parse LUT CSV: {exc}") from exc


def _coerce_numeric(frame: pd.DataFrame) -> pd.DataFrame:
    coerced = frame.apply(pd.to_numeric, errors="coerce")
    bad = coerced.isna().any(axis=1) | ~np.isfinite(coerced.to_numpy(dtype=np.float64)).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise LutFormatError(f"Malformed LUT row {row + 2}: {frame.iloc[row].tolist()}")
    return coerced.astype(np.float64)


def _grid_from_frame(frame: pd.DataFrame) -> LutGrid:
    if (frame[CHF_COLUMN] < 0).any():
        row = int(np.flatnonzero((frame[CHF_COLUMN] < 0).to_numpy())[0])
        raise ValidationError(f"Negative CHF value in LUT row {row + 2}: {frame[CHF_COLUMN].iloc[row]}")
    axes = [np.unique(frame[column].to_numpy()) for column in BASE_FEATURES]
    expected = int(np.prod([axis.size for axis in axes]))
    if len(frame) != expected or frame.duplicated(subset=list(BASE_FEATURES)).any():
        missing = expected - len(frame.drop_duplicates(subset=list(BASE_FEATURES)))
        raise GridIncompleteError(
            f"LUT has {len(frame)} rows for a {'x'.join(str(a.size) for a in axes)} grid "
            f"({expected} nodes, {missing} missing, duplicates={bool(frame.duplicated(subset=list(BASE_FEATURES)).any())})."
        )
    chf = np.full(tuple(axis.size for axis in axes), np.nan)
    index = tuple(np.searchsorted(axis, frame[column].to_numpy()) for axis, column in zip(axes, BASE_FEATURES))
    chf[index] = frame[CHF_COLUMN].to_numpy()
    if np.isnan(chf).any():
        raise GridIncompleteError("LUT is missing at least one (pressure, mass flux, quality) combination.")
    return LutGrid(pressures=axes[0], mass_fluxes=axes[1], qualities=axes[2], chf_values=chf)
