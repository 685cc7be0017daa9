from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from chfnet.data.dataset import Dataset, Standardizer, transform
from chfnet.data.lut import BASE_FEATURES
from chfnet.errors import ShapeMismatchError, ValidationError
from chfnet.nn.network import NetworkModel, predict
from chfnet.services.augment import Autoencoder, AutoencoderSpec, augment_dataset
from chfnet.storage.model_store import StoredModel, load_model

logger = logging.getLogger(__name__)


def autoencoder_metadata(ae: Autoencoder) -> Dict[str, Any]:
    return {
        "kind": "autoencoder",
        "spec": {"input_dim": ae.spec.input_dim, "hidden_dim": ae.spec.hidden_dim, "latent_dim": ae.spec.latent_dim},
        "final_loss": ae.final_loss,
        "code_scaler": ae.code_scaler.to_dict() if ae.code_scaler is not None else None,
    }


def autoencoder_from_stored(stored: StoredModel) -> Autoencoder:
    meta = stored.metadata
    if meta.get("kind") != "autoencoder":
        raise ValidationError("Model file does not hold an autoencoder.")
    scaler = meta.get("code_scaler")
    return Autoencoder(
        spec=AutoencoderSpec(**meta["spec"]),
        model=stored.model,
        final_loss=float(meta.get("final_loss", float("nan"))),
        code_scaler=Standardizer.from_dict(scaler) if scaler else None,
    )


@dataclass
class Predictor:
    """Frozen inference pipeline: raw (P, G, x) -> standardize -> optional codes -> DCNN."""

    variant: str
    model: NetworkModel
    standardizer: Standardizer
    autoencoder: Optional[Autoencoder] = None

    @property
    def feature_count(self) -> int:
        return int(self.model.input_shape[0])

    def model_features(self, ds: Dataset) -> Dataset:
        base = ds if ds.feature_count == len(BASE_FEATURES) else ds.with_features(ds.features[:, :3], ds.feature_names[:3])
        if tuple(base.feature_names) != BASE_FEATURES:
            raise ShapeMismatchError(f"Expected base features {BASE_FEATURES}, got {base.feature_names}.")
        standardized = transform(self.standardizer, base)
        if self.autoencoder is not None:
            standardized = augment_dataset(standardized, self.autoencoder)
        if standardized.feature_count != self.feature_count:
            raise ShapeMismatchError(
                f"Model {self.variant} expects {self.feature_count} features, pipeline produced {standardized.feature_count}."
            )
        return standardized

    def predict_dataset(self, ds: Dataset) -> np.ndarray:
        return predict(self.model, self.model_features(ds).features)

    def predict_one(self, pressure: float, mass_flux: float, quality: float) -> float:
        ds = Dataset(np.array([[pressure, mass_flux, quality]]), np.zeros(1), BASE_FEATURES)
        return float(self.predict_dataset(ds)[0])

    @classmethod
    def load(cls, path: Path) -> "Predictor":
        stored = load_model(path)
        meta = stored.metadata
        if "standardizer" not in meta:
            raise ValidationError(f"{path} is not a regressor bundle (no standardizer in its header).")
        autoencoder = None
        if meta.get("autoencoder"):
            autoencoder = autoencoder_from_stored(load_model(path.parent / meta["autoencoder"]))
        logger.info("Loaded %s predictor from %s", meta.get("variant", "?"), path)
        return cls(
            variant=str(meta.get("variant", path.stem)),
            model=stored.model,
            standardizer=Standardizer.from_dict(meta["standardizer"]),
            autoencoder=autoencoder,
        )
