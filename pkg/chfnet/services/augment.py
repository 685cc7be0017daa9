from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from chfnet.data.dataset import Dataset, Standardizer, fit_standardizer
from chfnet.errors import NotStandardizedError, ShapeMismatchError, ValidationError
from chfnet.nn import layers as L
from chfnet.nn.network import NetworkModel, predict
from chfnet.nn.training import TrainConfig, TrainHistory, train

logger = logging.getLogger(__name__)

BASE_FEATURE_COUNT = 3
VARIANT_LATENT_DIMS: Dict[str, int] = {"A1": 1, "A2": 2, "A3": 3}
STANDARDIZED_SD_RANGE = (0.5, 2.0)
# encoder = dense, tanh, dense
ENCODER_DEPTH = 3


@dataclass(frozen=True)
class AutoencoderSpec:
    input_dim: int = BASE_FEATURE_COUNT
    hidden_dim: int = 8
    latent_dim: int = 2

    def __post_init__(self) -> None:
        if min(self.input_dim, self.hidden_dim, self.latent_dim) < 1:
            raise ValidationError(f"Autoencoder dimensions must be >= 1: {self}")
        if self.latent_dim > self.input_dim:
            raise ValidationError(f"Latent width {self.latent_dim} exceeds input width {self.input_dim}.")


@dataclass(frozen=True)
class AugmentationConfig:
    variant: str
    train_config: TrainConfig = field(default_factory=TrainConfig)
    hidden_dim: int = 8
    standardize_codes: bool = False

    def __post_init__(self) -> None:
        if self.variant not in VARIANT_LATENT_DIMS:
            raise ValidationError(f"Unknown augmentation variant {self.variant!r}; expected one of {sorted(VARIANT_LATENT_DIMS)}.")

    @property
    def latent_dim(self) -> int:
        return VARIANT_LATENT_DIMS[self.variant]

    @property
    def feature_count(self) -> int:
        return BASE_FEATURE_COUNT + self.latent_dim

    @property
    def spec(self) -> AutoencoderSpec:
        return AutoencoderSpec(input_dim=BASE_FEATURE_COUNT, hidden_dim=self.hidden_dim, latent_dim=self.latent_dim)


@dataclass
class Autoencoder:
    spec: AutoencoderSpec
    model: NetworkModel
    history: TrainHistory = field(default_factory=TrainHistory)
    final_loss: float = float("nan")
    # optional rescaling of the codes, fitted on the training codes
    code_scaler: Optional[Standardizer] = None

    @property
    def encoder(self) -> NetworkModel:
        return NetworkModel(
            layers=self.model.layers[:ENCODER_DEPTH],
            input_shape=self.model.input_shape,
            parameters=self.model.parameters[:ENCODER_DEPTH],
            rng_seed=self.model.rng_seed,
        )

    @property
    def decoder(self) -> NetworkModel:
        return NetworkModel(
            layers=self.model.layers[ENCODER_DEPTH:],
            input_shape=(self.spec.latent_dim,),
            parameters=self.model.parameters[ENCODER_DEPTH:],
            rng_seed=self.model.rng_seed,
        )


def build_autoencoder(spec: AutoencoderSpec, seed: int = 0) -> NetworkModel:
    specs = (
        L.dense(spec.input_dim, spec.hidden_dim),
        L.activation("tanh"),
        L.dense(spec.hidden_dim, spec.latent_dim),
        L.dense(spec.latent_dim, spec.hidden_dim),
        L.activation("tanh"),
        L.dense(spec.hidden_dim, spec.input_dim),
    )
    return NetworkModel(layers=specs, input_shape=(spec.input_dim,), rng_seed=seed)


def check_standardized(data: np.ndarray) -> None:
    low, high = STANDARDIZED_SD_RANGE
    sds = np.asarray(data, dtype=np.float64).std(axis=0)
    offending = [i for i, sd in enumerate(sds) if not low <= sd <= high]
    if offending:
        raise NotStandardizedError(
            f"Autoencoder input columns {offending} have standard deviations {sds[offending].tolist()}; "
            f"expected standardized data (sd within [{low}, {high}])."
        )


def train_autoencoder(
    data: np.ndarray,
    spec: AutoencoderSpec,
    cfg: TrainConfig,
    init_seed: Optional[int] = None,
) -> Autoencoder:
    """Fit encoder and decoder jointly on reconstruction MSE."""
    features = np.asarray(data, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != spec.input_dim:
        raise ShapeMismatchError(f"Autoencoder expects (n, {spec.input_dim}) data, got {features.shape}.")
    check_standardized(features)
    model = build_autoencoder(spec, seed=cfg.seed if init_seed is None else init_seed)
    logger.info("Training autoencoder %d -> %d -> %d on %d samples", spec.input_dim, spec.hidden_dim, spec.latent_dim, len(features))
    result = train(model, (features, features), None, cfg)
    logger.info("Autoencoder latent=%d final reconstruction MSE %.6g", spec.latent_dim, result.final_train_loss)
    return Autoencoder(spec=spec, model=result.model, history=result.history, final_loss=result.final_train_loss)


def encode(ae: Autoencoder, features: np.ndarray) -> np.ndarray:
    array = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if array.shape[1] != ae.spec.input_dim:
        raise ShapeMismatchError(f"Encoder expects {ae.spec.input_dim} features, got {array.shape[1]}.")
    return predict(ae.encoder, array).reshape(array.shape[0], ae.spec.latent_dim)


def decode(ae: Autoencoder, codes: np.ndarray) -> np.ndarray:
    array = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    if array.shape[1] != ae.spec.latent_dim:
        raise ShapeMismatchError(f"Decoder expects {ae.spec.latent_dim} codes, got {array.shape[1]}.")
    return predict(ae.decoder, array).reshape(array.shape[0], ae.spec.input_dim)


def fit_code_scaler(ae: Autoencoder, train_data: Dataset) -> Autoencoder:
    codes = encode(ae, train_data.features)
    names = _code_names(ae.spec.latent_dim)
    ae.code_scaler = fit_standardizer(Dataset(codes, train_data.targets, names))
    return ae


def augment_dataset(ds: Dataset, ae: Autoencoder) -> Dataset:
    """Append the bottleneck codes as ``aug_1..aug_k``; base columns and targets are untouched."""
    if ds.feature_count != BASE_FEATURE_COUNT:
        raise ShapeMismatchError(f"Augmentation needs exactly {BASE_FEATURE_COUNT} base features, got {ds.feature_count}.")
    codes = encode(ae, ds.features)
    if ae.code_scaler is not None:
        codes = (codes - ae.code_scaler.means) / ae.code_scaler.stds
    names = tuple(ds.feature_names) + _code_names(ae.spec.latent_dim)
    return ds.with_features(np.hstack([ds.features, codes]), names)


def _code_names(k: int) -> Tuple[str, ...]:
    return tuple(f"aug_{i}" for i in range(1, k + 1))
