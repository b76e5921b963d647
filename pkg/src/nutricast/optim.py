"""Adam optimizer with per-group learning rates.

State is kept per parameter name in plain numpy arrays so it can be
serialized alongside the model. Updates iterate parameter names in
sorted order, which keeps training runs bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import Parameter
from .errors import ConfigError, ContractError


@dataclass
class AdamState:
    """First/second moment estimates and the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("adam eps must be positive")


def init_adam(params: Mapping[str, Parameter]) -> AdamState:
    state = AdamState()
    for name, p in sorted(params.items()):
        if p.trainable:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(
    params: Mapping[str, Parameter],
    state: AdamState,
    lr_by_group: Mapping[str, float],
    group_of: Mapping[str, str] | None = None,
    config: AdamConfig = AdamConfig(),
) -> None:
    """Apply one Adam update to every trainable parameter with a gradient.

    ``group_of`` maps parameter name to a group key in ``lr_by_group``;
    when omitted every parameter uses the single group present. Frozen
    parameters and parameters without gradients are left untouched.
    """
    if group_of is None:
        if len(lr_by_group) != 1:
            raise ConfigError("group_of is required with multiple learning-rate groups")
        default_group = next(iter(lr_by_group))
    state.step += 1
    t = state.step
    bc1 = 1.0 - config.beta1**t
    bc2 = 1.0 - config.beta2**t
    for name in sorted(params):
        p = params[name]
        if not p.trainable:
            continue
        g = p.tensor.grad
        if g is None:
            continue
        if name not in state.m:
            raise ContractError(f"optimizer state missing for parameter {name!r}")
        group = group_of[name] if group_of is not None else default_group
        if group not in lr_by_group:
            raise ConfigError(f"unknown learning-rate group {group!r} for {name!r}")
        lr = lr_by_group[group]
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + config.eps)
