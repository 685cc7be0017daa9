"""Model files: one UTF-8 JSON header line, then the parameters as a little-endian float64 blob.

Blob order: layer order, weights before biases, each array row-major.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from chfnet.errors import ChfError, ValidationError
from chfnet.nn.layers import LayerSpec, parameter_shapes
from chfnet.nn.network import NetworkModel
from chfnet.nn.training import TrainConfig

logger = logging.getLogger(__name__)

FORMAT = "chfnet-model/1"
BLOB_DTYPE = np.dtype("<f8")
MODEL_SUFFIX = ".chfm"


@dataclass
class StoredModel:
    model: NetworkModel
    train_config: Optional[TrainConfig] = None
    metadata: Dict[str, Any] = field(default_factory=dict)


def encode_model(stored: StoredModel) -> bytes:
    model = stored.model
    blob = np.concatenate([array.reshape(-1) for array in model.flat_parameters()]) if model.parameter_count else np.zeros(0)
    header = {
        "format": FORMAT,
        "layers": [spec.to_dict() for spec in model.layers],
        "input_shape": list(model.input_shape),
        "rng_seed": model.rng_seed,
        "parameter_count": model.parameter_count,
        "train_config": stored.train_config.to_dict() if stored.train_config else None,
        "metadata": stored.metadata,
    }
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return line + b"\n" + blob.astype(BLOB_DTYPE).tobytes()


def decode_model(payload: bytes) -> StoredModel:
    head, sep, blob = payload.partition(b"\n")
    if not sep:
        raise ValidationError("Model file has no header terminator.")
    try:
        header = json.loads(head.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"Model header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        found = header.get("format") if isinstance(header, dict) else type(header).__name__
        raise ValidationError(f"Unsupported model format {found!r}.")
    try:
        return _stored_from_header(header, blob)
    except ChfError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ValidationError(f"Malformed model header: {exc!r}") from exc


def _stored_from_header(header: Dict[str, Any], blob: bytes) -> StoredModel:
    specs = tuple(LayerSpec.from_dict(item) for item in header["layers"])
    values = np.frombuffer(blob, dtype=BLOB_DTYPE).astype(np.float64)
    parameters, offset = _unvectorize(specs, values)
    if offset != values.size or offset != header["parameter_count"]:
        raise ValidationError(f"Model blob holds {values.size} values, header declares {header['parameter_count']}.")
    model = NetworkModel(
        layers=specs,
        input_shape=tuple(header["input_shape"]),
        parameters=parameters,
        rng_seed=int(header["rng_seed"]),
    )
    train_config = TrainConfig.from_dict(header["train_config"]) if header.get("train_config") else None
    return StoredModel(model=model, train_config=train_config, metadata=header.get("metadata") or {})


def _unvectorize(specs: Tuple[LayerSpec, ...], values: np.ndarray) -> Tuple[List[Dict[str, np.ndarray]], int]:
    parameters = []
    offset = 0
    for spec in specs:
        layer = {}
        for name, shape in parameter_shapes(spec).items():
            size = int(np.prod(shape))
            if offset + size > values.size:
                raise ValidationError("Model blob is shorter than its layer specs require.")
            layer[name] = values[offset:offset + size].reshape(shape).copy()
            offset += size
        parameters.append(layer)
    return parameters, offset


class ModelStore:
    def __init__(self, root: Path) -> None:
        self._root = root
        self._root.mkdir(parents=True, exist_ok=True)

    def path_for(self, name: str) -> Path:
        return self._root / f"{name}{MODEL_SUFFIX}"

    def save(self, name: str, stored: StoredModel) -> Path:
        path = self.path_for(name)
        path.write_bytes(encode_model(stored))
        logger.info("Saved model %s (%d parameters) to %s", name, stored.model.parameter_count, path)
        return path

    def load(self, name: str) -> StoredModel:
        return load_model(self.path_for(name))


def save_model(path: Path, stored: StoredModel) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_model(stored))


def load_model(path: Path) -> StoredModel:
    if not path.exists():
        raise ValidationError(f"Model file {path} does not exist.")
    stored = decode_model(path.read_bytes())
    logger.debug("Loaded model from %s with %d parameters", path, stored.model.parameter_count)
    return stored
