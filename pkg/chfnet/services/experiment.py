from __future__ import annotations

import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, field_validator

from chfnet.data.dataset import Dataset, SplitResult, Standardizer, fit_standardizer, split, transform
from chfnet.data.lut import flatten, load_lut
from chfnet.errors import ChfError, PipelineStageError, ValidationError
from chfnet.nn.network import build_dcnn
from chfnet.nn.training import TrainConfig, TrainHistory, train
from chfnet.services.augment import (
    VARIANT_LATENT_DIMS,
    AugmentationConfig,
    Autoencoder,
    augment_dataset,
    fit_code_scaler,
    train_autoencoder,
)
from chfnet.services.metrics import METRIC_NAMES, MetricsReport, evaluate, render_table
from chfnet.services.predictor import Predictor, autoencoder_metadata
from chfnet.storage.model_store import ModelStore, StoredModel

logger = logging.getLogger(__name__)

VARIANT_ORDER = ("base", "A1", "A2", "A3")
DISPLAY_NAMES = {"base": "DCNN-base", "A1": "DCNN-AE1", "A2": "DCNN-AE2", "A3": "DCNN-AE3"}
EXPECTED_FEATURE_COUNTS = {"base": 3, "A1": 4, "A2": 5, "A3": 6}

# Seed derivation: SeedSequence([master, stage code, variant index]) -> first 32-bit word.
STAGE_CODES = {"split": 1, "ae_init": 2, "ae_shuffle": 3, "dcnn_init": 4, "dcnn_shuffle": 5}

PREDICTION_COLUMNS = ("measured_chf", "predicted_chf", "split_tag")


def derive_seed(master: int, stage: str, index: int = 0) -> int:
    sequence = np.random.SeedSequence([int(master), STAGE_CODES[stage], int(index)])
    return int(sequence.generate_state(1)[0])


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lut_path: Path
    seed: int = 0
    train_fraction: float = Field(0.8, gt=0, lt=1)
    variants: Tuple[str, ...] = VARIANT_ORDER
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(200, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    ae_hidden_dim: int = Field(8, ge=1)
    ae_epochs: Optional[int] = Field(None, ge=1)
    standardize_codes: bool = False
    require_full_coverage: bool = True
    log_every: int = Field(20, ge=1)
    output_dir: Path = Path("runs/latest")

    @field_validator("variants", mode="before")
    @classmethod
    def _parse_variants(cls, value: Any) -> Tuple[str, ...]:
        if isinstance(value, str):
            value = [part.strip() for part in value.split(",") if part.strip()]
        requested = set(value)
        unknown = requested - set(VARIANT_ORDER)
        if unknown:
            raise ValueError(f"Unknown variants {sorted(unknown)}; choose from {VARIANT_ORDER}.")
        if not requested:
            raise ValueError("At least one variant is required.")
        return tuple(variant for variant in VARIANT_ORDER if variant in requested)

    def train_config(self, seed: int, warm_start: bool) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            seed=seed,
            warm_start_output_bias=warm_start,
            log_every=self.log_every,
        )

    def autoencoder_config(self, variant: str) -> AugmentationConfig:
        index = VARIANT_ORDER.index(variant)
        cfg = TrainConfig(
            batch_size=self.batch_size,
            epochs=self.ae_epochs or self.epochs,
            learning_rate=self.learning_rate,
            seed=derive_seed(self.seed, "ae_shuffle", index),
            log_every=self.log_every,
        )
        return AugmentationConfig(
            variant=variant,
            train_config=cfg,
            hidden_dim=self.ae_hidden_dim,
            standardize_codes=self.standardize_codes,
        )


def load_experiment_config(path: Optional[Path], overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """Flat ``KEY=value`` file (dotenv syntax); non-None overrides win over file values."""
    values: Dict[str, Any] = {}
    if path is not None:
        if not path.exists():
            raise ValidationError(f"Config file {path} does not exist.")
        values = {key.lower(): value for key, value in dotenv_values(path).items() if value is not None}
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key.lower()] = value
    try:
        return ExperimentConfig(**values)
    except PydanticValidationError as exc:
        raise ValidationError(f"Invalid experiment config: {exc}") from exc


@contextmanager
def stage(name: str) -> Iterator[None]:
    try:
        yield
    except PipelineStageError:
        raise
    except (ChfError, ValueError, OSError) as exc:
        logger.error("Pipeline stage %s failed: %s", name, exc)
        raise PipelineStageError(name, exc) from exc


@dataclass
class PreparedData:
    """A split plus its standardized copies; the standardizer only ever sees the training part."""

    split: SplitResult
    standardizer: Standardizer
    train: Dataset
    test: Dataset


def standardize_split(result: SplitResult) -> PreparedData:
    with stage("standardize"):
        standardizer = fit_standardizer(result.train)
        return PreparedData(
            split=result,
            standardizer=standardizer,
            train=transform(standardizer, result.train),
            test=transform(standardizer, result.test),
        )


def prepare_data(cfg: ExperimentConfig, dataset: Dataset) -> PreparedData:
    with stage("split"):
        result = split(dataset, cfg.train_fraction, derive_seed(cfg.seed, "split"))
    return standardize_split(result)


@dataclass
class FittedVariant:
    variant: str
    predictor: Predictor
    history: TrainHistory
    final_train_loss: float
    train_metrics: MetricsReport
    test_metrics: MetricsReport
    autoencoder: Optional[Autoencoder] = None

    @property
    def feature_count(self) -> int:
        return self.predictor.feature_count


def fit_variant(cfg: ExperimentConfig, variant: str, prepared: PreparedData) -> FittedVariant:
    index = VARIANT_ORDER.index(variant)
    autoencoder = None
    train_ds, test_ds = prepared.train, prepared.test
    if variant in VARIANT_LATENT_DIMS:
        aug = cfg.autoencoder_config(variant)
        with stage("autoencoder"):
            autoencoder = train_autoencoder(
                train_ds.features, aug.spec, aug.train_config, init_seed=derive_seed(cfg.seed, "ae_init", index)
            )
            if aug.standardize_codes:
                fit_code_scaler(autoencoder, train_ds)
        with stage("augment"):
            train_ds = augment_dataset(train_ds, autoencoder)
            test_ds = augment_dataset(test_ds, autoencoder)
    if train_ds.feature_count != EXPECTED_FEATURE_COUNTS[variant]:
        raise PipelineStageError("augment", ValidationError(
            f"Variant {variant} produced {train_ds.feature_count} features, expected {EXPECTED_FEATURE_COUNTS[variant]}."
        ))

    with stage("train"):
        model = build_dcnn(train_ds.feature_count, seed=derive_seed(cfg.seed, "dcnn_init", index))
        train_cfg = cfg.train_config(derive_seed(cfg.seed, "dcnn_shuffle", index), warm_start=True)
        logger.info("Training %s on %d samples with %d features", DISPLAY_NAMES[variant], len(train_ds), train_ds.feature_count)
        result = train(
            model,
            (train_ds.features, train_ds.targets),
            (test_ds.features, test_ds.targets),
            train_cfg,
        )
    predictor = Predictor(variant=variant, model=result.model, standardizer=prepared.standardizer, autoencoder=autoencoder)
    with stage("evaluate"):
        train_metrics = evaluate(prepared.split.train.targets, predictor.predict_dataset(prepared.split.train))
        test_metrics = evaluate(prepared.split.test.targets, predictor.predict_dataset(prepared.split.test))
    logger.info(
        "%s test: R2=%.4f NSE=%.4f NRMSE=%.4f MAE=%.2f",
        DISPLAY_NAMES[variant], test_metrics.r2, test_metrics.nse, test_metrics.nrmse, test_metrics.mae,
    )
    return FittedVariant(
        variant=variant,
        predictor=predictor,
        history=result.history,
        final_train_loss=result.final_train_loss,
        train_metrics=train_metrics,
        test_metrics=test_metrics,
        autoencoder=autoencoder,
    )


@dataclass
class VariantResult:
    variant: str
    feature_count: int
    train_metrics: MetricsReport
    test_metrics: MetricsReport
    history: TrainHistory = field(default_factory=TrainHistory)
    ae_history: Optional[TrainHistory] = None
    ae_final_loss: Optional[float] = None
    model_file: Optional[str] = None
    parameter_count: int = 0

    def metrics_dict(self) -> Dict[str, Any]:
        return {
            "model": DISPLAY_NAMES.get(self.variant, self.variant),
            "feature_count": self.feature_count,
            "parameter_count": self.parameter_count,
            "model_file": self.model_file,
            "ae_final_loss": self.ae_final_loss,
            "train": self.train_metrics.to_dict(),
            "test": self.test_metrics.to_dict(),
        }


@dataclass
class RunReport:
    seed: int
    sample_count: int
    split_manifest: Dict[str, Any]
    variants: Dict[str, VariantResult] = field(default_factory=dict)

    @property
    def feature_counts(self) -> Dict[str, int]:
        return {name: result.feature_count for name, result in self.variants.items()}

    def metrics_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "sample_count": self.sample_count,
            "train_size": len(self.split_manifest.get("train_indices", [])),
            "test_size": len(self.split_manifest.get("test_indices", [])),
            "feature_counts": self.feature_counts,
            "variants": {name: result.metrics_dict() for name, result in self.variants.items()},
        }

    def histories_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {}
        for name, result in self.variants.items():
            payload[name] = {"dcnn": result.history.to_dict()}
            if result.ae_history is not None:
                payload[name]["autoencoder"] = result.ae_history.to_dict()
        return payload

    def table(self) -> str:
        return render_table({
            DISPLAY_NAMES.get(name, name): (result.train_metrics, result.test_metrics)
            for name, result in self.variants.items()
        })

    @classmethod
    def from_metrics_dict(cls, payload: Mapping[str, Any]) -> "RunReport":
        report = cls(seed=int(payload.get("seed", 0)), sample_count=int(payload.get("sample_count", 0)), split_manifest={})
        for name, item in payload["variants"].items():
            report.variants[name] = VariantResult(
                variant=name,
                feature_count=int(item["feature_count"]),
                train_metrics=MetricsReport.from_dict(item["train"]),
                test_metrics=MetricsReport.from_dict(item["test"]),
                ae_final_loss=item.get("ae_final_loss"),
                model_file=item.get("model_file"),
                parameter_count=int(item.get("parameter_count", 0)),
            )
        return report


def export_predictions(predictor: Predictor, ds: Dataset, path: Path, split_tag: str = "all") -> pd.DataFrame:
    """Write measured vs predicted CHF, one row per sample, for external scatter plots."""
    with stage("export"):
        frame = _prediction_frame(predictor, ds, split_tag)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, encoding="utf-8")
    logger.info("Exported %d predictions to %s", len(frame), path)
    return frame


def export_split_predictions(predictor: Predictor, result: SplitResult, path: Path) -> pd.DataFrame:
    with stage("export"):
        frame = pd.concat(
            [_prediction_frame(predictor, result.train, "train"), _prediction_frame(predictor, result.test, "test")],
            ignore_index=True,
        )
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, encoding="utf-8")
    return frame


def _prediction_frame(predictor: Predictor, ds: Dataset, split_tag: str) -> pd.DataFrame:
    predicted = predictor.predict_dataset(ds)
    return pd.DataFrame({
        "measured_chf": ds.targets,
        "predicted_chf": predicted,
        "split_tag": [split_tag] * len(ds),
    })


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    with stage("ingest"):
        grid = load_lut(cfg.lut_path, require_full_coverage=cfg.require_full_coverage)
    with stage("flatten"):
        dataset = flatten(grid)
    prepared = prepare_data(cfg, dataset)

    out = cfg.output_dir
    store = ModelStore(out / "models")
    report = RunReport(seed=cfg.seed, sample_count=len(dataset), split_manifest=prepared.split.manifest())
    for variant in cfg.variants:
        fitted = fit_variant(cfg, variant, prepared)
        report.variants[variant] = _persist_variant(cfg, fitted, prepared, store)

    _write_reports(cfg, report)
    return report


def _persist_variant(cfg: ExperimentConfig, fitted: FittedVariant, prepared: PreparedData, store: ModelStore) -> VariantResult:
    variant = fitted.variant
    ae_file = None
    with stage("export"):
        if fitted.autoencoder is not None:
            ae_path = store.save(f"ae_{variant}", StoredModel(
                model=fitted.autoencoder.model,
                train_config=cfg.autoencoder_config(variant).train_config,
                metadata=autoencoder_metadata(fitted.autoencoder),
            ))
            ae_file = ae_path.name
        train_cfg = cfg.train_config(derive_seed(cfg.seed, "dcnn_shuffle", VARIANT_ORDER.index(variant)), warm_start=True)
        model_path = store.save(variant, StoredModel(
            model=fitted.predictor.model,
            train_config=train_cfg,
            metadata={
                "variant": variant,
                "display_name": DISPLAY_NAMES[variant],
                "feature_names": list(_feature_names(fitted)),
                "standardizer": prepared.standardizer.to_dict(),
                "autoencoder": ae_file,
            },
        ))
    export_split_predictions(fitted.predictor, prepared.split, cfg.output_dir / "predictions" / f"{variant}.csv")
    return VariantResult(
        variant=variant,
        feature_count=fitted.feature_count,
        train_metrics=fitted.train_metrics,
        test_metrics=fitted.test_metrics,
        history=fitted.history,
        ae_history=fitted.autoencoder.history if fitted.autoencoder is not None else None,
        ae_final_loss=fitted.autoencoder.final_loss if fitted.autoencoder is not None else None,
        model_file=f"models/{model_path.name}",
        parameter_count=fitted.predictor.model.parameter_count,
    )


def _feature_names(fitted: FittedVariant) -> Tuple[str, ...]:
    base = fitted.predictor.standardizer.feature_names
    k = fitted.feature_count - len(base)
    return tuple(base) + tuple(f"aug_{i}" for i in range(1, k + 1))


def _write_json(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_reports(cfg: ExperimentConfig, report: RunReport) -> None:
    out = cfg.output_dir
    reports = out / "reports"
    _write_json(reports / "metrics.json", report.metrics_dict())
    _write_json(reports / "history.json", report.histories_dict())
    reports.mkdir(parents=True, exist_ok=True)
    (reports / "performance.txt").write_text(report.table(), encoding="utf-8")
    if len(report.variants) >= 2:
        (reports / "ranking.txt").write_text(compare_variants(report).render(), encoding="utf-8")
    _write_json(out / "manifest.json", {
        "config": json.loads(cfg.model_dump_json()),
        "seed": report.seed,
        "sample_count": report.sample_count,
        "feature_counts": report.feature_counts,
        "split": report.split_manifest,
        "models": {name: result.model_file for name, result in report.variants.items()},
    })
    logger.info("Wrote run artifacts to %s", out)


@dataclass(frozen=True)
class RankingRow:
    variant: str
    test_r2: float
    test_nrmse: float
    deltas: Optional[Dict[str, float]]


@dataclass(frozen=True)
class Ranking:
    rows: Tuple[RankingRow, ...]

    @property
    def order(self) -> List[str]:
        return [row.variant for row in self.rows]

    def render(self) -> str:
        lines = [
            "Variants ranked by test R^2 (ties: lower test NRMSE first, then input order)",
            f"{'rank':<5}{'model':<14}{'test R2':>10}{'test NRMSE':>12}" + "".join(f"{'d_' + m:>12}" for m in METRIC_NAMES),
        ]
        for rank, row in enumerate(self.rows, start=1):
            deltas = "".join(
                f"{row.deltas[m]:>+12.4f}" if row.deltas is not None else f"{'n/a':>12}" for m in METRIC_NAMES
            )
            lines.append(f"{rank:<5}{DISPLAY_NAMES.get(row.variant, row.variant):<14}{row.test_r2:>10.4f}{row.test_nrmse:>12.4f}{deltas}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "order": self.order,
            "rows": [
                {"variant": row.variant, "test_r2": row.test_r2, "test_nrmse": row.test_nrmse, "deltas_vs_base": row.deltas}
                for row in self.rows
            ],
        }


def compare_variants(report: RunReport) -> Ranking:
    if len(report.variants) < 2:
        raise ValidationError(f"Ranking needs at least two variants, report has {len(report.variants)}.")
    base = report.variants.get("base")
    items = list(report.variants.values())
    # sorted() is stable, so equal keys keep input order
    ordered = sorted(items, key=lambda r: (-r.test_metrics.r2, r.test_metrics.nrmse))
    rows = []
    for result in ordered:
        deltas = None
        if base is not None:
            deltas = {m: getattr(result.test_metrics, m) - getattr(base.test_metrics, m) for m in METRIC_NAMES}
        rows.append(RankingRow(result.variant, result.test_metrics.r2, result.test_metrics.nrmse, deltas))
    return Ranking(rows=tuple(rows))


def run_study(cfg: ExperimentConfig, seeds: Sequence[int], tolerance: float = 0.002) -> Dict[str, Any]:
    """Repeat the matrix per master seed; record the ranking and whether augmentation keeps up with base."""
    per_seed: Dict[str, Any] = {}
    for seed in seeds:
        seed_cfg = cfg.model_copy(update={"seed": int(seed), "output_dir": cfg.output_dir / f"seed_{seed}"})
        report = run_experiment(seed_cfg)
        entry: Dict[str, Any] = {"test_r2": {name: r.test_metrics.r2 for name, r in report.variants.items()}}
        if len(report.variants) >= 2:
            entry["order"] = compare_variants(report).order
        base = report.variants.get("base")
        augmented = [r.test_metrics.r2 for name, r in report.variants.items() if name != "base"]
        if base is not None and augmented:
            entry["augmented_within_tolerance"] = max(augmented) >= base.test_metrics.r2 - tolerance
        per_seed[str(seed)] = entry
        logger.info("Seed %s ranking: %s", seed, entry.get("order"))
    payload = {"seeds": [int(s) for s in seeds], "tolerance": tolerance, "results": per_seed}
    _write_json(cfg.output_dir / "study.json", payload)
    return payload


def load_run_report(output_dir: Union[str, Path]) -> RunReport:
    path = Path(output_dir) / "reports" / "metrics.json"
    if not path.exists():
        raise ValidationError(f"No run report at {path}.")
    return RunReport.from_metrics_dict(json.loads(path.read_text(encoding="utf-8")))
