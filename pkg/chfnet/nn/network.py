from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, List, Sequence, Tuple

import numpy as np

from chfnet.errors import ShapeMismatchError, ValidationError
from chfnet.nn import layers as L
from chfnet.nn.layers import LayerSpec, Params

logger = logging.getLogger(__name__)

DCNN_INPUT_LENGTHS = (3, 4, 5, 6)
DCNN_CONV_CHANNELS = (16, 32, 64, 64, 32)
DCNN_DENSE_WIDTHS = (64, 16)


@dataclass
class NetworkModel:
    layers: Tuple[LayerSpec, ...]
    input_shape: Tuple[int, ...]
    parameters: List[Params] = field(default_factory=list)
    rng_seed: int = 0
    output_shape: Tuple[int, ...] = field(init=False, default=())

    def __post_init__(self) -> None:
        self.layers = tuple(self.layers)
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if not self.layers:
            raise ValidationError("A network needs at least one layer.")
        shape = self.input_shape
        for spec in self.layers:
            shape = L.output_shape(spec, shape)
        self.output_shape = shape
        if not self.parameters:
            rng = np.random.default_rng(self.rng_seed)
            self.parameters = [L.init_parameters(spec, rng) for spec in self.layers]
        self._check_parameters()

    def _check_parameters(self) -> None:
        if len(self.parameters) != len(self.layers):
            raise ShapeMismatchError(f"{len(self.parameters)} parameter sets for {len(self.layers)} layers.")
        for index, (spec, params) in enumerate(zip(self.layers, self.parameters)):
            expected = L.parameter_shapes(spec)
            actual = {name: tuple(array.shape) for name, array in params.items()}
            if actual != expected:
                raise ShapeMismatchError(f"Layer {index} ({spec.kind}) has parameter shapes {actual}, expected {expected}.")

    @property
    def parameter_count(self) -> int:
        return int(sum(array.size for params in self.parameters for array in params.values()))

    def copy(self) -> "NetworkModel":
        return NetworkModel(
            layers=self.layers,
            input_shape=self.input_shape,
            parameters=[{name: array.copy() for name, array in params.items()} for params in self.parameters],
            rng_seed=self.rng_seed,
        )

    def flat_parameters(self) -> List[np.ndarray]:
        """Parameter arrays in serialized order: layer order, weights before biases."""
        return [params[name] for spec, params in zip(self.layers, self.parameters) for name in L.parameter_shapes(spec)]


def _check_batch(model: NetworkModel, batch: np.ndarray) -> np.ndarray:
    array = np.asarray(batch, dtype=np.float64)
    if array.ndim < 1 or tuple(array.shape[1:]) != model.input_shape:
        raise ShapeMismatchError(f"Model expects batches shaped (n, {', '.join(map(str, model.input_shape))}), got {array.shape}.")
    return array


def as_model_input(model: NetworkModel, features: np.ndarray) -> np.ndarray:
    """Reshape an (n, f) feature matrix into the model's per-sample input shape."""
    array = np.asarray(features, dtype=np.float64)
    return array.reshape((array.shape[0],) + model.input_shape)


def _forward_with_caches(model: NetworkModel, batch: np.ndarray) -> Tuple[np.ndarray, List[Any]]:
    activation = _check_batch(model, batch)
    caches = []
    for spec, params in zip(model.layers, model.parameters):
        activation, cache = L.forward(spec, params, activation)
        caches.append(cache)
    return activation, caches


def forward(model: NetworkModel, batch: np.ndarray) -> np.ndarray:
    output, _ = _forward_with_caches(model, batch)
    return output


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"Prediction shape {pred.shape} differs from target shape {target.shape}.")
    return float(np.mean((pred - target) ** 2))


def loss_and_gradients(model: NetworkModel, batch: np.ndarray, target: np.ndarray) -> Tuple[float, List[Params]]:
    pred, caches = _forward_with_caches(model, batch)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.shape:
        raise ShapeMismatchError(f"Target shape {target.shape} differs from output shape {pred.shape}.")
    diff = pred - target
    loss = float(np.mean(diff ** 2))
    grad = 2.0 * diff / diff.size
    grads: List[Params] = [{} for _ in model.layers]
    for index in range(len(model.layers) - 1, -1, -1):
        grad, grads[index] = L.backward(model.layers[index], model.parameters[index], caches[index], grad)
    return loss, grads


def backward(model: NetworkModel, batch: np.ndarray, target: np.ndarray) -> List[Params]:
    """Analytic gradients of ``mse_loss(forward(model, batch), target)`` for every parameter."""
    return loss_and_gradients(model, batch, target)[1]


def predict(model: NetworkModel, features: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    """Evaluate an (n, f) feature matrix in chunks; returns the flattened outputs for single-output models."""
    inputs = as_model_input(model, features)
    outputs = [forward(model, inputs[start:start + batch_size]) for start in range(0, inputs.shape[0], batch_size)]
    result = np.concatenate(outputs, axis=0)
    return result.reshape(-1) if result.shape[1:] == (1,) else result


def build_sequential(specs: Sequence[LayerSpec], input_shape: Tuple[int, ...], seed: int = 0) -> NetworkModel:
    return NetworkModel(layers=tuple(specs), input_shape=input_shape, rng_seed=seed)


def build_dcnn(input_length: int, seed: int = 0, activation: str = "relu") -> NetworkModel:
    """Five 'same'-padded kernel-3 convolutions, then three dense layers (8 weight-bearing layers)."""
    if input_length not in DCNN_INPUT_LENGTHS:
        raise ValidationError(f"DCNN input length must be one of {DCNN_INPUT_LENGTHS}, got {input_length}.")
    specs: List[LayerSpec] = []
    channels = 1
    for width in DCNN_CONV_CHANNELS:
        specs += [L.conv1d(channels, width, kernel_size=3, padding="same"), L.activation(activation)]
        channels = width
    specs.append(L.flatten())
    features = channels * input_length
    for width in DCNN_DENSE_WIDTHS:
        specs += [L.dense(features, width), L.activation(activation)]
        features = width
    specs.append(L.dense(features, 1))
    model = NetworkModel(layers=tuple(specs), input_shape=(input_length, 1), rng_seed=seed)
    logger.info("Built DCNN for input (n, %d, 1) with %d parameters", input_length, model.parameter_count)
    return model
