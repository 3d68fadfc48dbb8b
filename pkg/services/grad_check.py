"""
Finite-difference verification of analytic gradients.
"""

import logging
from typing import Callable

import numpy as np

from services.autodiff import Graph, Tensor, backward, grad_check_mode
from services.errors import ConfigError, GradCheckError

logger = logging.getLogger(__name__)


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """
    Compare backward() against central differences for a scalar function.

    Args:
        f: Zero-argument callable that rebuilds the loss from ``params``.
        params: Named parameters; they are switched to 64-bit copies for the
            duration of the check and restored afterwards.
        eps: Finite-difference step.
        max_entries: If set, at most this many randomly chosen entries are
            perturbed per parameter.
        seed: Seed for choosing the perturbed entries.

    Returns:
        max over entries of |analytic - numeric| / max(1, |analytic|).
    """
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    if not params:
        raise ConfigError("grad_check needs at least one parameter")

    originals = {name: param.data for name, param in params.items()}
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_name = None

    with grad_check_mode():
        try:
            for param in params.values():
                param.data = _frozen(param.data.astype(np.float64))

            with Graph() as graph:
                loss = f()
            if loss.data.size != 1:
                raise GradCheckError(f"loss must be scalar, got shape {loss.shape}")
            analytic = backward(graph, loss, params)

            for name, param in params.items():
                base = param.data
                entries = np.arange(base.size)
                if max_entries is not None and base.size > max_entries:
                    entries = np.sort(rng.choice(base.size, size=max_entries, replace=False))
                grad = analytic[name].reshape(-1)

                for entry in entries:
                    numeric = _central_difference(f, param, base, int(entry), eps)
                    value = float(grad[entry])
                    if not np.isfinite(numeric) or not np.isfinite(value):
                        raise GradCheckError("non-finite gradient", param_id=name)
                    error = abs(value - numeric) / max(1.0, abs(value))
                    if error > worst:
                        worst, worst_name = error, name
        finally:
            for name, param in params.items():
                param.data = originals[name]

    logger.info(f"grad check: max relative error {worst:.3e} (worst parameter: {worst_name})")
    return worst


def _central_difference(f, param: Tensor, base: np.ndarray, entry: int, eps: float) -> float:
    values = []
    for step in (eps, -eps):
        shifted = base.copy()
        shifted.reshape(-1)[entry] += step
        param.data = _frozen(shifted)
        values.append(float(f().item()))
    param.data = base
    return (values[0] - values[1]) / (2.0 * eps)


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array
