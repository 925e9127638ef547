from dataclasses import dataclass, field
from typing import Callable, Dict, Tuple

import numpy as np

from app.nn.network import TRAIN, Network

LossFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_parameter: Dict[str, float] = field(default_factory=dict)
    input_rel_error: float = 0.0
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance and self.input_rel_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    # Below the floor both values are finite-difference noise.
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(
    net: Network,
    loss_fn: LossFn,
    x: np.ndarray,
    tolerance: float = 1e-4,
    eps: float = 1e-5,
    mode: str = TRAIN,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    Batchnorm running statistics are restored around every perturbed pass so the
    check leaves the network unchanged. Frozen layers are skipped.
    """
    x = np.asarray(x, dtype=np.float64)
    snapshot = {k: v.copy() for k, v in net.buffers().items()}

    def restore():
        for name, value in net.buffers().items():
            value[...] = snapshot[name]

    def loss_at(inputs: np.ndarray) -> float:
        out, _ = net.forward(inputs, mode)
        restore()
        return loss_fn(out)[0]

    out, cache = net.forward(x, mode)
    _, grad_out = loss_fn(out)
    analytic, input_grad = net.backward(cache, grad_out)
    restore()

    per_parameter = {}
    for name, param in net.trainable_parameters().items():
        numeric = np.zeros_like(param)
        for index in np.ndindex(param.shape):
            original = param[index]
            param[index] = original + eps
            plus = loss_at(x)
            param[index] = original - eps
            minus = loss_at(x)
            param[index] = original
            numeric[index] = (plus - minus) / (2 * eps)
        per_parameter[name] = relative_error(analytic[name], numeric)

    numeric_input = np.zeros_like(x)
    shifted = x.copy()
    for index in np.ndindex(x.shape):
        original = shifted[index]
        shifted[index] = original + eps
        plus = loss_at(shifted)
        shifted[index] = original - eps
        minus = loss_at(shifted)
        shifted[index] = original
        numeric_input[index] = (plus - minus) / (2 * eps)

    return GradCheckReport(
        max_rel_error=max(per_parameter.values(), default=0.0),
        per_parameter=per_parameter,
        input_rel_error=relative_error(input_grad, numeric_input),
        tolerance=tolerance,
    )
