from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from chfnet.data.lut import BASE_FEATURES, CHF_COLUMN
from chfnet.errors import LutFormatError, ShapeMismatchError, ValidationError, ZeroVarianceError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Sample:
    features: Tuple[float, ...]
    target: float


@dataclass(frozen=True)
class Dataset:
    """Regression rows: a (n, f) feature matrix, n targets and the feature labels."""

    features: np.ndarray
    targets: np.ndarray
    feature_names: Tuple[str, ...] = BASE_FEATURES

    def __post_init__(self) -> None:
        features = np.array(self.features, dtype=np.float64)
        targets = np.array(self.targets, dtype=np.float64).reshape(-1)
        if features.ndim != 2 or features.shape[0] == 0:
            raise ValidationError(f"Dataset needs a non-empty (n, f) feature matrix, got shape {features.shape}.")
        if targets.shape[0] != features.shape[0]:
            raise ShapeMismatchError(f"{features.shape[0]} feature rows but {targets.shape[0]} targets.")
        names = tuple(self.feature_names)
        if len(names) != features.shape[1]:
            raise ShapeMismatchError(f"{len(names)} feature names for {features.shape[1]} feature columns.")
        if not (np.all(np.isfinite(features)) and np.all(np.isfinite(targets))):
            raise ValidationError("Dataset values must be finite.")
        features.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "feature_names", names)

    def __len__(self) -> int:
        return int(self.features.shape[0])

    def __iter__(self) -> Iterator[Sample]:
        for row, target in zip(self.features, self.targets):
            yield Sample(features=tuple(float(v) for v in row), target=float(target))

    @property
    def samples(self) -> List[Sample]:
        return list(self)

    @property
    def feature_count(self) -> int:
        return int(self.features.shape[1])

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], feature_names: Sequence[str]) -> "Dataset":
        if not samples:
            raise ValidationError("Dataset needs at least one sample.")
        widths = {len(sample.features) for sample in samples}
        if len(widths) != 1:
            raise ShapeMismatchError(f"Samples have mixed feature counts {sorted(widths)}.")
        return cls(
            features=np.array([sample.features for sample in samples], dtype=np.float64),
            targets=np.array([sample.target for sample in samples], dtype=np.float64),
            feature_names=tuple(feature_names),
        )

    def select(self, indices: Sequence[int]) -> "Dataset":
        index = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[index], self.targets[index], self.feature_names)

    def with_features(self, features: np.ndarray, feature_names: Sequence[str]) -> "Dataset":
        return Dataset(features, self.targets, tuple(feature_names))


@dataclass(frozen=True)
class ColumnStats:
    min: float
    max: float
    mean: float
    sd: float
    cv: Optional[float]

    def as_dict(self) -> Dict[str, Optional[float]]:
        return {"min": self.min, "max": self.max, "mean": self.mean, "sd": self.sd, "cv": self.cv}


def compute_stats(ds: Dataset) -> Dict[str, ColumnStats]:
    """Per-column min/max/mean/population-sd/cv for every feature plus the target."""
    columns = {name: ds.features[:, i] for i, name in enumerate(ds.feature_names)}
    columns[CHF_COLUMN] = ds.targets
    stats: Dict[str, ColumnStats] = {}
    for name, values in columns.items():
        mean = float(np.mean(values))
        sd = float(np.std(values))
        stats[name] = ColumnStats(
            min=float(np.min(values)),
            max=float(np.max(values)),
            mean=mean,
            sd=sd,
            cv=sd / mean if mean != 0 else None,
        )
    return stats


@dataclass(frozen=True)
class Standardizer:
    means: np.ndarray
    stds: np.ndarray
    feature_names: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        means = np.array(self.means, dtype=np.float64).reshape(-1)
        stds = np.array(self.stds, dtype=np.float64).reshape(-1)
        if means.shape != stds.shape:
            raise ShapeMismatchError(f"{means.size} means but {stds.size} standard deviations.")
        if not np.all(stds > 0):
            raise ValidationError("Standardizer deviations must all be positive.")
        means.setflags(write=False)
        stds.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "feature_names": list(self.feature_names),
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "Standardizer":
        return cls(
            means=np.array(payload["means"]),
            stds=np.array(payload["stds"]),
            feature_names=tuple(payload.get("feature_names", ())),
        )


def fit_standardizer(train: Dataset) -> Standardizer:
    means = train.features.mean(axis=0)
    stds = train.features.std(axis=0)
    # constant columns are caught by their span; std of a float constant may be nonzero
    spans = np.ptp(train.features, axis=0)
    for name, sd, span in zip(train.feature_names, stds, spans):
        if span == 0 or sd == 0:
            raise ZeroVarianceError(name)
    logger.debug("Fitted standardizer on %d samples", len(train))
    return Standardizer(means=means, stds=stds, feature_names=train.feature_names)


def transform(s: Standardizer, ds: Dataset) -> Dataset:
    _check_width(s, ds)
    return ds.with_features((ds.features - s.means) / s.stds, ds.feature_names)


def inverse_transform(s: Standardizer, ds: Dataset) -> Dataset:
    _check_width(s, ds)
    return ds.with_features(ds.features * s.stds + s.means, ds.feature_names)


def _check_width(s: Standardizer, ds: Dataset) -> None:
    if ds.feature_count != s.means.size:
        raise ShapeMismatchError(
            f"Standardizer was fitted on {s.means.size} features but the dataset has {ds.feature_count}."
        )


@dataclass(frozen=True)
class SplitResult:
    train: Dataset
    test: Dataset
    seed: int
    train_indices: Tuple[int, ...] = field(default=())
    test_indices: Tuple[int, ...] = field(default=())

    def manifest(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "train_indices": list(self.train_indices),
            "test_indices": list(self.test_indices),
        }

    def write_manifest(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.manifest(), sort_keys=True), encoding="utf-8")


def train_size(n: int, train_fraction: float) -> int:
    # round half up
    return int(math.floor(n * train_fraction + 0.5))


def shuffled_indices(n: int, seed: int) -> np.ndarray:
    """Seeded Fisher-Yates shuffle of ``range(n)``."""
    rng = np.random.default_rng(seed)
    draws = rng.random(max(n - 1, 0))
    order = np.arange(n, dtype=np.int64)
    for step, i in enumerate(range(n - 1, 0, -1)):
        j = int(draws[step] * (i + 1))
        order[i], order[j] = order[j], order[i]
    return order


def split(ds: Dataset, train_fraction: float, seed: int) -> SplitResult:
    if not 0 < train_fraction < 1:
        raise ValidationError(f"train_fraction must lie strictly between 0 and 1, got {train_fraction}.")
    n = len(ds)
    cut = train_size(n, train_fraction)
    if cut < 1 or cut > n - 1:
        raise ValidationError(f"A dataset of {n} samples cannot be split {train_fraction:.2f}/{1 - train_fraction:.2f}.")
    order = shuffled_indices(n, seed)
    train_idx, test_idx = order[:cut], order[cut:]
    logger.info("Split %d samples into %d train / %d test (seed=%d)", n, cut, n - cut, seed)
    return SplitResult(
        train=ds.select(train_idx),
        test=ds.select(test_idx),
        seed=seed,
        train_indices=tuple(int(i) for i in train_idx),
        test_indices=tuple(int(i) for i in test_idx),
    )


def read_dataset_csv(path: Union[str, Path]) -> Dataset:
    if not Path(path).exists():
        raise ValidationError(f"Dataset CSV {path} does not exist.")
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise LutFormatError(f"Could not parse dataset CSV {path}: {exc}") from exc
    if CHF_COLUMN not in frame.columns:
        raise ValidationError(f"Dataset CSV {path} has no {CHF_COLUMN} column.")
    missing = [name for name in BASE_FEATURES if name not in frame.columns]
    if missing:
        raise ValidationError(f"Dataset CSV {path} is missing columns {missing}.")
    aug = [str(c) for c in frame.columns if str(c).startswith("aug_")]
    bad_names = [c for c in aug if not c[4:].isdigit()]
    if bad_names:
        raise LutFormatError(f"Dataset CSV {path} has malformed augmented columns {bad_names}; expected aug_<n>.")
    names = list(BASE_FEATURES) + sorted(aug, key=lambda c: int(c[4:]))
    numeric = frame[names + [CHF_COLUMN]].apply(pd.to_numeric, errors="coerce")
    bad_rows = numeric.isna().any(axis=1)
    if bad_rows.any():
        row = int(np.flatnonzero(bad_rows.to_numpy())[0])
        raise LutFormatError(f"Malformed dataset row {row + 2} in {path}: {frame.iloc[row].tolist()}")
    return Dataset(
        features=numeric[names].to_numpy(dtype=np.float64),
        targets=numeric[CHF_COLUMN].to_numpy(dtype=np.float64),
        feature_names=tuple(names),
    )


def write_dataset_csv(ds: Dataset, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(ds.features, columns=list(ds.feature_names))
    frame[CHF_COLUMN] = ds.targets
    frame.to_csv(path, index=False, encoding="utf-8")


def compare_with_reference(
    stats: Dict[str, ColumnStats],
    reference: Dict[str, Dict[str, float]],
    tolerance: float = 0.01,
) -> Dict[str, Dict[str, Dict[str, Any]]]:
    """Cell-by-cell deviation from a published statistics table (relative, absolute when the reference is 0)."""
    comparison: Dict[str, Dict[str, Dict[str, Any]]] = {}
    for column, cells in reference.items():
        if column not in stats:
            continue
        values = stats[column].as_dict()
        comparison[column] = {}
        for name, expected in cells.items():
            actual = values.get(name)
            if actual is None:
                comparison[column][name] = {"value": None, "reference": expected, "deviation": None, "ok": False}
                continue
            deviation = abs(actual - expected) / abs(expected) if expected != 0 else abs(actual - expected)
            comparison[column][name] = {
                "value": actual,
                "reference": expected,
                "deviation": deviation,
                "ok": deviation <= tolerance,
            }
    return comparison
