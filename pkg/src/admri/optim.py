"""Momentum SGD with L2 weight decay and a step learning-rate schedule.

Update rule per tensor, with lr from the step schedule at the current
global iteration:

    g' = grad + weight_decay * param
    v  = momentum * v - lr * g'
    param = param + v

Decay is folded into the gradient before the momentum update and applies
uniformly to weights and biases.
"""

from dataclasses import dataclass

import numpy as np

from .nn.network import NetworkParams


@dataclass(frozen=True)
class SgdConfig:
    base_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    gamma: float = 0.1
    stepsize: int = 10000

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError(f"base_lr must be > 0, got {self.base_lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.stepsize < 1:
            raise ValueError(f"stepsize must be >= 1, got {self.stepsize}")


def lr_at(iteration: int, config: SgdConfig) -> float:
    """base_lr * gamma^floor(iteration / stepsize)."""
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    return config.base_lr * config.gamma ** (iteration // config.stepsize)


def init_velocity(params: NetworkParams) -> dict:
    """Zero momentum buffers mirroring every parameter tensor."""
    return {name: np.zeros_like(t) for name, t in params.tensors()}


def sgd_step(
    params: NetworkParams,
    grads: dict,
    velocity: dict,
    config: SgdConfig,
    iteration: int,
):
    """One update; returns (new_params, new_velocity), inputs untouched."""
    lr = params.dtype.type(lr_at(iteration, config))
    mu = params.dtype.type(config.momentum)
    wd = params.dtype.type(config.weight_decay)
    new_tensors = {}
    new_velocity = {}
    for name, tensor in params.tensors():
        g = grads[name]
        v = velocity[name]
        if g.shape != tensor.shape or v.shape != tensor.shape:
            raise ValueError(
                f"{name}: param {tensor.shape}, grad {g.shape}, velocity {v.shape} disagree"
            )
        adjusted = g + wd * tensor
        v_next = mu * v - lr * adjusted
        new_tensors[name] = tensor + v_next
        new_velocity[name] = v_next
    return params.with_tensors(new_tensors), new_velocity
