"""Layer kinds with hand-written forward and backward passes.

Every layer is stateless: ``forward`` returns the output together with a cache, and
``backward`` consumes that cache, so a frozen model can serve concurrent callers.
Sequences are channels-last, ``(batch, length, channels)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from chfnet.errors import ShapeMismatchError, ValidationError

Params = Dict[str, np.ndarray]

LAYER_KINDS = ("conv1d", "dense", "activation", "flatten")
ACTIVATIONS = ("relu", "tanh", "linear")
PADDING_MODES = ("same", "valid")

_SPEC_FIELDS: Dict[str, Tuple[str, ...]] = {
    "conv1d": ("in_channels", "out_channels", "kernel_size", "padding"),
    "dense": ("in_features", "out_features"),
    "activation": ("activation",),
    "flatten": (),
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    padding: str = "same"
    in_features: int = 0
    out_features: int = 0
    activation: str = ""

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ValidationError(f"Unknown layer kind {self.kind!r}.")
        if self.kind == "conv1d":
            if min(self.in_channels, self.out_channels, self.kernel_size) < 1:
                raise ValidationError(f"conv1d extents must be positive: {self}")
            if self.padding not in PADDING_MODES:
                raise ValidationError(f"Unknown padding mode {self.padding!r}.")
            if self.padding == "same" and self.kernel_size % 2 == 0:
                raise ValidationError("conv1d with 'same' padding needs an odd kernel size.")
        elif self.kind == "dense":
            if min(self.in_features, self.out_features) < 1:
                raise ValidationError(f"dense extents must be positive: {self}")
        elif self.kind == "activation" and self.activation not in ACTIVATIONS:
            raise ValidationError(f"Unknown activation {self.activation!r}.")

    @property
    def has_parameters(self) -> bool:
        return self.kind in ("conv1d", "dense")

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        return {key: values[key] for key in ("kind",) + _SPEC_FIELDS[self.kind]}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "LayerSpec":
        return cls(**payload)


def conv1d(in_channels: int, out_channels: int, kernel_size: int = 3, padding: str = "same") -> LayerSpec:
    return LayerSpec("conv1d", in_channels=in_channels, out_channels=out_channels, kernel_size=kernel_size, padding=padding)


def dense(in_features: int, out_features: int) -> LayerSpec:
    return LayerSpec("dense", in_features=in_features, out_features=out_features)


def activation(name: str) -> LayerSpec:
    return LayerSpec("activation", activation=name)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def parameter_shapes(spec: LayerSpec) -> Dict[str, Tuple[int, ...]]:
    """Weights before biases; this order is also the serialized order."""
    if spec.kind == "conv1d":
        return {"weight": (spec.kernel_size, spec.in_channels, spec.out_channels), "bias": (spec.out_channels,)}
    if spec.kind == "dense":
        return {"weight": (spec.in_features, spec.out_features), "bias": (spec.out_features,)}
    return {}


def init_parameters(spec: LayerSpec, rng: np.random.Generator) -> Params:
    shapes = parameter_shapes(spec)
    if not shapes:
        return {}
    fan_in = int(np.prod(shapes["weight"][:-1]))
    bound = np.sqrt(6.0 / fan_in)
    return {
        "weight": rng.uniform(-bound, bound, size=shapes["weight"]),
        "bias": np.zeros(shapes["bias"], dtype=np.float64),
    }


def output_shape(spec: LayerSpec, input_shape: Tuple[int, ...]) -> Tuple[int, ...]:
    """Per-sample shape (batch dimension excluded)."""
    if spec.kind == "conv1d":
        if len(input_shape) != 2 or input_shape[1] != spec.in_channels:
            raise ShapeMismatchError(f"conv1d expects (length, {spec.in_channels}), got {input_shape}.")
        length = input_shape[0] if spec.padding == "same" else input_shape[0] - spec.kernel_size + 1
        if length < 1:
            raise ShapeMismatchError(f"Sequence of length {input_shape[0]} is shorter than kernel {spec.kernel_size}.")
        return (length, spec.out_channels)
    if spec.kind == "dense":
        if input_shape != (spec.in_features,):
            raise ShapeMismatchError(f"dense expects ({spec.in_features},), got {input_shape}.")
        return (spec.out_features,)
    if spec.kind == "flatten":
        return (int(np.prod(input_shape)),)
    return input_shape


def forward(spec: LayerSpec, params: Params, x: np.ndarray) -> Tuple[np.ndarray, Any]:
    if spec.kind == "dense":
        return x @ params["weight"] + params["bias"], x
    if spec.kind == "conv1d":
        return _conv_forward(spec, params, x)
    if spec.kind == "flatten":
        return x.reshape(x.shape[0], -1), x.shape
    return _activation_forward(spec.activation, x)


def backward(spec: LayerSpec, params: Params, cache: Any, grad_out: np.ndarray) -> Tuple[np.ndarray, Params]:
    if spec.kind == "dense":
        x = cache
        grads = {"weight": x.T @ grad_out, "bias": grad_out.sum(axis=0)}
        return grad_out @ params["weight"].T, grads
    if spec.kind == "conv1d":
        return _conv_backward(spec, params, cache, grad_out)
    if spec.kind == "flatten":
        return grad_out.reshape(cache), {}
    return _activation_backward(spec.activation, cache, grad_out), {}


def _pad_width(spec: LayerSpec) -> int:
    return (spec.kernel_size - 1) // 2 if spec.padding == "same" else 0


def _conv_forward(spec: LayerSpec, params: Params, x: np.ndarray) -> Tuple[np.ndarray, Any]:
    batch, length, _ = x.shape
    pad = _pad_width(spec)
    padded = np.pad(x, ((0, 0), (pad, pad), (0, 0))) if pad else x
    out_length = padded.shape[1] - spec.kernel_size + 1
    # (batch, out_length, kernel, in_channels)
    columns = np.stack([padded[:, k:k + out_length, :] for k in range(spec.kernel_size)], axis=2)
    flat = columns.reshape(batch * out_length, spec.kernel_size * spec.in_channels)
    kernel = params["weight"].reshape(spec.kernel_size * spec.in_channels, spec.out_channels)
    out = (flat @ kernel).reshape(batch, out_length, spec.out_channels) + params["bias"]
    return out, (flat, x.shape, padded.shape)


def _conv_backward(spec: LayerSpec, params: Params, cache: Any, grad_out: np.ndarray) -> Tuple[np.ndarray, Params]:
    flat, input_shape, padded_shape = cache
    batch, out_length, _ = grad_out.shape
    grad_flat = grad_out.reshape(batch * out_length, spec.out_channels)
    kernel = params["weight"].reshape(spec.kernel_size * spec.in_channels, spec.out_channels)
    grads = {
        "weight": (flat.T @ grad_flat).reshape(params["weight"].shape),
        "bias": grad_flat.sum(axis=0),
    }
    grad_columns = (grad_flat @ kernel.T).reshape(batch, out_length, spec.kernel_size, spec.in_channels)
    grad_padded = np.zeros(padded_shape, dtype=np.float64)
    for k in range(spec.kernel_size):
        grad_padded[:, k:k + out_length, :] += grad_columns[:, :, k, :]
    pad = _pad_width(spec)
    grad_x = grad_padded[:, pad:pad + input_shape[1], :] if pad else grad_padded
    return grad_x, grads


def _activation_forward(name: str, x: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    if name == "relu":
        return np.maximum(x, 0.0), x
    if name == "tanh":
        out = np.tanh(x)
        return out, out
    return x, None


def _activation_backward(name: str, cache: Optional[np.ndarray], grad_out: np.ndarray) -> np.ndarray:
    if name == "relu":
        return grad_out * (cache > 0)
    if name == "tanh":
        return grad_out * (1.0 - cache ** 2)
    return grad_out
