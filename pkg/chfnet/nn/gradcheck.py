from __future__ import annotations

import logging
from typing import List, Optional

import numpy as np

from chfnet.nn.layers import Params
from chfnet.nn.network import NetworkModel, backward, forward, mse_loss

logger = logging.getLogger(__name__)


def gradient_check(
    model: NetworkModel,
    batch: np.ndarray,
    target: np.ndarray,
    h: float = 1e-5,
    gradients: Optional[List[Params]] = None,
    sample: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Largest relative error between analytic gradients and central finite differences.

    ``gradients`` overrides the analytic gradients (used to test the checker itself);
    ``sample`` restricts the comparison to that many randomly chosen parameter entries.
    """
    analytic = gradients if gradients is not None else backward(model, batch, target)
    perturbed = model.copy()
    entries = [
        (layer, name, flat)
        for layer, params in enumerate(perturbed.parameters)
        for name, array in params.items()
        for flat in range(array.size)
    ]
    if sample is not None and sample < len(entries):
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(entries), size=sample, replace=False)
        entries = [entries[i] for i in sorted(chosen)]

    worst = 0.0
    for layer, name, flat in entries:
        array = perturbed.parameters[layer][name].reshape(-1)
        original = array[flat]
        array[flat] = original + h
        plus = mse_loss(forward(perturbed, batch), target)
        array[flat] = original - h
        minus = mse_loss(forward(perturbed, batch), target)
        array[flat] = original
        numeric = (plus - minus) / (2.0 * h)
        exact = float(analytic[layer][name].reshape(-1)[flat])
        error = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-12)
        worst = max(worst, error)
    logger.debug("Gradient check over %d entries: max relative error %.3e", len(entries), worst)
    return worst
