"""Dense numeric helpers: initialisation, activations and the Adam optimizer.

Matrices and vectors are plain ``float64`` numpy arrays; the helpers here only
add the validation the rest of the package relies on.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, NumericError

DTYPE = np.float64


def check_finite(x: np.ndarray, what: str = "array") -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} contains non-finite values")


def xavier_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform matrix of shape ``(rows, cols)``."""
    if rows < 1 or cols < 1:
        raise DimensionError(f"cannot initialise a {rows}x{cols} matrix")
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols)).astype(DTYPE, copy=False)


def tanh_forward(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def tanh_backward(y: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient through tanh given its output ``y``."""
    return upstream * (1.0 - y * y)


@dataclass
class AdamState:
    """Moment accumulators for a fixed list of parameter arrays."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    shapes: list[tuple[int, ...]] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float = 1e-3, **kw) -> "AdamState":
        return cls(
            m=[np.zeros_like(p, dtype=DTYPE) for p in params],
            v=[np.zeros_like(p, dtype=DTYPE) for p in params],
            lr=lr,
            shapes=[p.shape for p in params],
            **kw,
        )


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
) -> tuple[Sequence[np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied in place.

    ``grads[k] is None`` marks a frozen parameter: it is left untouched and
    its moments do not advance.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params, grads and optimizer state differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != m.shape:
            raise DimensionError(f"parameter shape {p.shape} != state shape {m.shape}")
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        check_finite(g, "gradient")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
