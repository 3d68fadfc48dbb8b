"""
AdamW with decoupled weight decay over named parameter tensors.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from services.autodiff import Tensor
from services.errors import ConfigError


@dataclass(frozen=True)
class AdamWHyper:
    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamWState:
    hyper: AdamWHyper
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def create(cls, params: dict[str, Tensor], hyper: AdamWHyper) -> "AdamWState":
        return cls(
            hyper=hyper,
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
        )


def default_no_decay(name: str) -> bool:
    """Biases and normalization parameters are not decayed."""
    return name.endswith(".bias") or ".norm." in name


def adamw_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    hyper: AdamWHyper | None = None,
    no_decay: Callable[[str], bool] | None = None,
) -> tuple[dict[str, Tensor], AdamWState]:
    """
    One AdamW update. Parameter tensors get fresh arrays; the state is updated
    in place and returned.
    """
    hyper = hyper or state.hyper
    state.t += 1
    bias1 = 1.0 - hyper.beta1 ** state.t
    bias2 = 1.0 - hyper.beta2 ** state.t

    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(param.data)
        if grad.shape != param.data.shape:
            raise ConfigError(f"Gradient for {name} has shape {grad.shape}, parameter has {param.data.shape}")
        m = state.m.setdefault(name, np.zeros_like(param.data))
        v = state.v.setdefault(name, np.zeros_like(param.data))

        m = hyper.beta1 * m + (1.0 - hyper.beta1) * grad
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * grad * grad
        state.m[name], state.v[name] = m, v

        value = param.data
        weight_decay = 0.0 if no_decay is not None and no_decay(name) else hyper.weight_decay
        if weight_decay:
            value = value - hyper.lr * weight_decay * value
        value = value - hyper.lr * (m / bias1) / (np.sqrt(v / bias2) + hyper.eps)
        value = value.astype(param.data.dtype, copy=False)
        value.flags.writeable = False
        param.data = value
    return params, state
