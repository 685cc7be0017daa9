from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from chfnet.errors import ShapeMismatchError, TrainingDivergedError, ValidationError
from chfnet.nn.network import NetworkModel, as_model_input, loss_and_gradients, mse_loss, predict
from chfnet.nn.optim import AdamState, adam_step

logger = logging.getLogger(__name__)

ArrayPair = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 200
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    warm_start_output_bias: bool = False
    log_every: int = 20

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}.")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}.")
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}.")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.epsilon > 0):
            raise ValidationError("Adam needs 0 <= beta1, beta2 < 1 and epsilon > 0.")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload["optimizer"] = "adam"
        payload["loss"] = "mse"
        return payload

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "TrainConfig":
        known = {key: value for key, value in payload.items() if key in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    valid_loss: List[Optional[float]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, List[Optional[float]]]:
        return {"train_loss": list(self.train_loss), "valid_loss": list(self.valid_loss)}


@dataclass
class TrainResult:
    model: NetworkModel
    history: TrainHistory
    final_train_loss: float


def _prepare(model: NetworkModel, data: ArrayPair, label: str) -> ArrayPair:
    features, targets = data
    features = np.asarray(features, dtype=np.float64)
    if features.ndim < 2 or int(np.prod(features.shape[1:])) != int(np.prod(model.input_shape)):
        raise ShapeMismatchError(f"{label} inputs of shape {features.shape} do not fit model input {model.input_shape}.")
    inputs = as_model_input(model, features.reshape(features.shape[0], -1))
    targets = np.asarray(targets, dtype=np.float64).reshape((features.shape[0],) + model.output_shape)
    return inputs, targets


def evaluate_loss(model: NetworkModel, data: ArrayPair) -> float:
    inputs, targets = _prepare(model, data, "evaluation")
    outputs = predict(model, inputs.reshape(inputs.shape[0], -1))
    return mse_loss(outputs.reshape(targets.shape), targets)


def train(
    model: NetworkModel,
    train_data: ArrayPair,
    valid_data: Optional[ArrayPair],
    cfg: TrainConfig,
) -> TrainResult:
    """Seeded mini-batch Adam on the mean squared error; the input model is left untouched."""
    inputs, targets = _prepare(model, train_data, "training")
    valid = _prepare(model, valid_data, "validation") if valid_data is not None else None
    trained = model.copy()
    if cfg.warm_start_output_bias and trained.layers[-1].kind == "dense":
        trained.parameters[-1]["bias"] = targets.reshape(targets.shape[0], -1).mean(axis=0)
    state = AdamState.zeros_like(trained.parameters)
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    n = inputs.shape[0]
    batches = math.ceil(n / cfg.batch_size)
    logger.info(
        "Training %d parameters on %d samples: %d epochs x %d batches",
        trained.parameter_count, n, cfg.epochs, batches,
    )
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        weighted = 0.0
        for batch in range(batches):
            index = order[batch * cfg.batch_size:(batch + 1) * cfg.batch_size]
            loss, grads = loss_and_gradients(trained, inputs[index], targets[index])
            if not math.isfinite(loss):
                logger.error("Non-finite loss", extra={"epoch": epoch, "batch": batch, "loss": loss})
                raise TrainingDivergedError(epoch, batch, loss)
            trained.parameters, state = adam_step(trained.parameters, grads, state, cfg)
            weighted += loss * index.size
        history.train_loss.append(weighted / n)
        valid_loss = evaluate_loss(trained, valid) if valid is not None else None
        history.valid_loss.append(valid_loss)
        if epoch == 1 or epoch == cfg.epochs or epoch % max(cfg.log_every, 1) == 0:
            logger.info("epoch %d/%d train_loss=%.6g valid_loss=%s", epoch, cfg.epochs, history.train_loss[-1], valid_loss)
    final_loss = evaluate_loss(trained, (inputs, targets))
    if not math.isfinite(final_loss):
        raise TrainingDivergedError(cfg.epochs, batches - 1, final_loss)
    return TrainResult(model=trained, history=history, final_train_loss=final_loss)
