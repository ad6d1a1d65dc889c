"""Adam and plain SGD over name -> array parameter maps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigError, ContractError


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def _check_grads(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
    for name, value in params.items():
        if name not in grads:
            raise ContractError(f"no gradient for parameter {name!r}")
        if np.shape(grads[name]) != np.shape(value):
            raise ContractError(f"gradient for {name!r} has shape {np.shape(grads[name])}, "
                                f"parameter has {np.shape(value)}")


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[dict[str, np.ndarray], AdamState]:
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    _check_grads(params, grads)
    t = state.t + 1
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = beta1 * state.m.get(name, 0.0) + (1 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(m_new, v_new, t)


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
             lr: float) -> dict[str, np.ndarray]:
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    _check_grads(params, grads)
    return {name: p - lr * grads[name] for name, p in params.items()}
