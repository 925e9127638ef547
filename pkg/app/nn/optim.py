from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from app.core.exceptions import NumericError, ShapeError


@dataclass
class OptimizerState:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)


def sgd_momentum_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    opt: OptimizerState,
) -> Dict[str, np.ndarray]:
    """v <- momentum*v + (g + wd*p); p <- p - lr*v.

    Validates every gradient before touching any state, so a failed step
    leaves `opt.velocity` unchanged.
    """
    for name, param in params.items():
        if name not in grads:
            raise ShapeError(f"no gradient for parameter {name}")
        grad = grads[name]
        if np.shape(grad) != np.shape(param):
            raise ShapeError(f"gradient for {name} has shape {np.shape(grad)}, expected {np.shape(param)}")
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for {name}; step aborted")

    updated = {}
    velocity = {}
    for name, param in params.items():
        previous = opt.velocity.get(name)
        if previous is None:
            previous = np.zeros_like(param)
        v = opt.momentum * previous + (grads[name] + opt.weight_decay * param)
        velocity[name] = v
        updated[name] = param - opt.learning_rate * v
    opt.velocity.update(velocity)
    return updated


def apply_step(network, grads: Dict[str, np.ndarray], opt: OptimizerState) -> None:
    trainable = network.trainable_parameters()
    updated = sgd_momentum_step(trainable, {k: grads[k] for k in trainable}, opt)
    network.set_parameters(updated)
