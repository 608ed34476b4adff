"""Slow, loop-based reference implementations used as test oracles.

Nothing here shares code with the package beyond the parameter container,
so agreement with the vectorised sparse code is meaningful.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from ncae.data import InteractionMatrix
from ncae.model import ModelParams, TrainConfig, backward, corrupt_rows, sparse_forward

# Fig.-3-style toy: 4 users, 5 items, item counts [2, 3, 4, 2, 1]
FIG3_ROWS = [[0, 1, 2, 3], [1, 2], [1, 2, 3], [0, 2, 4]]


def fig3_matrix() -> InteractionMatrix:
    users = [i for i, row in enumerate(FIG3_ROWS) for _ in row]
    items = [j for row in FIG3_ROWS for j in row]
    return InteractionMatrix.from_triples(
        users, items, np.ones(len(items)), 4, 5,
        user_ids=["u1", "u2", "u3", "u4"], item_ids=["v1", "v2", "v3", "v4", "v5"],
    )


def dense_forward(params: ModelParams, x: np.ndarray, mode: str, linear_output: bool = False) -> np.ndarray:
    """Plain dense forward of a single input vector (zeros at missing entries)."""
    h = np.asarray(x, dtype=float)
    L = params.n_layers
    for k in range(L):
        a = np.zeros(params.weights[k].shape[0])
        for r in range(a.size):
            a[r] = params.biases[k][r] + sum(params.weights[k][r, c] * h[c] for c in range(h.size))
        h = a if (k == L - 1 and linear_output) else np.array([math.tanh(v) for v in a])
    if mode == "explicit":
        return 2.25 * h + 2.75
    return h


def brute_explicit(pred: np.ndarray, observed: dict[int, float], dropped: set[int], alpha: float, beta: float) -> float:
    if not observed:
        return 0.0
    total = 0.0
    for j, r in observed.items():
        w = alpha if j in dropped else beta
        total += w * (pred[j] - r) ** 2
    return total / len(observed)


def brute_implicit(pred: np.ndarray, observed: set[int], c: np.ndarray) -> float:
    total = 0.0
    for j in range(pred.size):
        if j in observed:
            total += (pred[j] - 1.0) ** 2
        else:
            total += c[j] * pred[j] ** 2
    return total


def objective(params, inputs, observed, dropped, mode, alpha, beta, c, weight_decay, linear_output=False):
    """Mean per-row loss over a batch plus the L2 penalty, all by loops."""
    losses = []
    for x, obs, drop in zip(inputs, observed, dropped):
        pred = dense_forward(params, x, mode, linear_output)
        if mode == "explicit":
            losses.append(brute_explicit(pred, obs, drop, alpha, beta))
        else:
            losses.append(brute_implicit(pred, set(obs), c))
    penalty = 0.5 * weight_decay * sum(float(np.sum(a * a)) for a in params.arrays())
    return float(np.mean(losses)) + penalty


def central_differences(f, arrays, h: float = 1e-5) -> list[np.ndarray]:
    """Numerical gradient of scalar ``f()`` w.r.t. each array, perturbing in place."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            up = f()
            a[idx] = old - h
            down = f()
            a[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest entrywise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def hit_rank(scores: np.ndarray, excluded: set[int], item: int) -> int:
    """1-based rank of ``item`` by sorting with Python's stable sort."""
    order = sorted((j for j in range(scores.size) if j not in excluded), key=lambda j: (-scores[j], j))
    return order.index(item) + 1


def gradient_check(mode: str, n_layers: int, seed: int, n_items: int = 6, width: int = 5, batch: int = 4) -> float:
    """Max relative error between :func:`ncae.model.backward` and central
    differences of :func:`objective` on a random network and batch."""
    rng = np.random.default_rng(seed)
    dims = [n_items] + [width] * (n_layers - 1) + [n_items]
    params = ModelParams.init(dims, rng)
    for bias in params.biases:
        bias += rng.normal(scale=0.3, size=bias.shape)
    mask = rng.random((batch, n_items)) < 0.5
    mask[:, 0] = True  # every row observed somewhere
    if mode == "explicit":
        values = np.where(mask, rng.integers(1, 11, size=mask.shape) * 0.5, 0.0)
    else:
        values = mask.astype(float)
    b = corrupt_rows(sp.csr_matrix(values), 0.5, rng)
    conf = rng.random(n_items) * 2.0
    config = TrainConfig(mode=mode, q=0.5, alpha=1.3, beta=0.7, weight_decay=0.05)

    inputs = b.inputs.toarray()
    observed, dropped = [], []
    t = b.targets
    for i in range(batch):
        sl = slice(t.indptr[i], t.indptr[i + 1])
        observed.append(dict(zip(t.indices[sl].tolist(), t.data[sl].tolist())))
        dropped.append(set(t.indices[sl][b.dropped[sl]].tolist()))

    analytic = backward(sparse_forward(params, b, mode), config, conf)

    def f():
        return objective(params, inputs, observed, dropped, mode, config.alpha, config.beta, conf, config.weight_decay)

    numeric = central_differences(f, params.arrays())
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
