from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from ..lib.errors import NumericError, ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    """First and second moment estimates per parameter name, plus the step counter."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_registry(cls, registry: Dict[str, Tensor]) -> "AdamState":
        return cls(
            {name: np.zeros_like(p.data) for name, p in registry.items()},
            {name: np.zeros_like(p.data) for name, p in registry.items()},
            0,
        )


def adam_step(
    registry: Dict[str, Tensor],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    lr=1e-3,
    beta1=0.9,
    beta2=0.999,
    eps=1e-8,
):
    """Bias-corrected Adam update of every parameter in ``grads``, in place

    All gradients are checked before any parameter moves, so a rejected step leaves registry and
    state untouched.

    Args:
        registry (Dict[str, Tensor]): parameters to update
        grads (Dict[str, np.ndarray]): gradient per parameter name
        state (AdamState): moments, advanced in place
        lr (float, optional): step size. Defaults to 1e-3.
        beta1 (float, optional): first moment decay. Defaults to 0.9.
        beta2 (float, optional): second moment decay. Defaults to 0.999.
        eps (float, optional): denominator guard. Defaults to 1e-8.

    Returns:
        (Dict[str, Tensor], AdamState): the updated registry and state
    """
    for name in sorted(grads):
        if name not in registry:
            raise ShapeError(f"gradient for unknown parameter {name!r}")
        g = grads[name]
        if np.shape(g) != registry[name].shape:
            raise ShapeError(f"gradient of {name} has shape {np.shape(g)}, parameter is {registry[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}")

    state.t += 1
    t = state.t
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    for name in sorted(grads):
        p = registry[name]
        g = np.asarray(grads[name], dtype=p.data.dtype)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = (beta1 * m + (1.0 - beta1) * g).astype(p.data.dtype)
        v = (beta2 * v + (1.0 - beta2) * g * g).astype(p.data.dtype)
        state.m[name], state.v[name] = m, v
        m_hat = m / correction1
        v_hat = v / correction2
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
    return registry, state
