from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, Tuple

import numpy as np

from chfnet.errors import ShapeMismatchError
from chfnet.nn.layers import Params

if TYPE_CHECKING:
    from chfnet.nn.training import TrainConfig


@dataclass
class AdamState:
    first_moment: List[Params] = field(default_factory=list)
    second_moment: List[Params] = field(default_factory=list)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: List[Params]) -> "AdamState":
        return cls(
            first_moment=[{name: np.zeros_like(array) for name, array in layer.items()} for layer in params],
            second_moment=[{name: np.zeros_like(array) for name, array in layer.items()} for layer in params],
            step=0,
        )


def adam_step(
    params: List[Params],
    grads: List[Params],
    state: AdamState,
    cfg: "TrainConfig",
) -> Tuple[List[Params], AdamState]:
    """One bias-corrected Adam update; returns new parameter and moment arrays."""
    learning_rate, beta1, beta2, epsilon = cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeMismatchError("Parameters, gradients and optimizer state disagree on the number of layers.")
    step = state.step + 1
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step
    new_params: List[Params] = []
    new_m: List[Params] = []
    new_v: List[Params] = []
    for layer, layer_grads, m_layer, v_layer in zip(params, grads, state.first_moment, state.second_moment):
        p_out, m_out, v_out = {}, {}, {}
        for name, value in layer.items():
            grad = layer_grads[name]
            if grad.shape != value.shape:
                raise ShapeMismatchError(f"Gradient for {name} has shape {grad.shape}, parameter has {value.shape}.")
            m = beta1 * m_layer[name] + (1.0 - beta1) * grad
            v = beta2 * v_layer[name] + (1.0 - beta2) * grad * grad
            m_hat = m / correction1
            v_hat = v / correction2
            p_out[name] = value - learning_rate * m_hat / (np.sqrt(v_hat) + epsilon)
            m_out[name] = m
            v_out[name] = v
        new_params.append(p_out)
        new_m.append(m_out)
        new_v.append(v_out)
    return new_params, AdamState(first_moment=new_m, second_moment=new_v, step=step)
