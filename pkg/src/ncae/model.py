"""The collaborative autoencoder: corruption, sparse forward pass, masked
losses and the hand-written sparse backward pass.

Everything operates on mini-batches of rows held in scipy CSR matrices; a
single user is simply a batch of one. In explicit mode the output layer is
only evaluated at observed entries during training, so the cost of a batch is
linear in its number of ratings plus the dense middle layers.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .data import ConfidenceVector, InteractionMatrix, SparseVector
from .errors import ConfigError, DimensionError
from .numeric import AdamState, adam_step, check_finite, xavier_init

MODES = ("explicit", "implicit")
ORIENTATIONS = ("user", "item")

# tanh output mapped onto the 0.5..5.0 rating scale
RESHAPE_SCALE = 2.25
RESHAPE_SHIFT = 2.75


@dataclass
class ModelParams:
    """Weights ``W^l`` of shape ``(K_l, K_{l-1})`` and biases ``b^l``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("need one bias per weight matrix and at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionError(f"layer {k + 1}: weight {w.shape} / bias {b.shape} mismatch")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise DimensionError(f"layer {k + 1} input width does not match layer {k} output")

    @classmethod
    def init(cls, dims: Sequence[int], rng: np.random.Generator) -> "ModelParams":
        """Xavier weights and zero biases for layer widths ``[N, K_1, ..., N]``."""
        dims = list(dims)
        if len(dims) < 3:
            raise DimensionError("need at least one hidden layer")
        if dims[0] != dims[-1]:
            raise DimensionError("input and output widths must both equal the item count")
        weights = [xavier_init(dims[k + 1], dims[k], rng) for k in range(len(dims) - 1)]
        biases = [np.zeros(d) for d in dims[1:]]
        return cls(weights, biases)

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list[np.ndarray]:
        """Parameters in ``[W^1, b^1, W^2, b^2, ...]`` order."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def check_finite(self) -> None:
        for a in self.arrays():
            check_finite(a, "parameter")


@dataclass
class TrainConfig:
    mode: str = "explicit"
    q: float = 0.5
    alpha: float = 1.0
    beta: float = 1.0
    weight_decay: float = 2e-4
    batch_size: int = 128
    epochs: int = 30
    learning_rate: float = 1e-3
    c0: float = 512.0
    omega: float = 0.5
    epsilon: float = 0.001
    drop_ratio: float = 0.8
    min_remaining: int = 1
    augment: bool = False
    orientation: str = "user"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.orientation not in ORIENTATIONS:
            raise ConfigError(f"orientation must be one of {ORIENTATIONS}, got {self.orientation!r}")
        if not 0 <= self.q < 1:
            raise ConfigError(f"dropout ratio must lie in [0, 1), got {self.q}")
        if self.alpha < 0 or self.beta < 0 or self.weight_decay < 0:
            raise ConfigError("alpha, beta and weight decay must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch size must be at least 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------- corruption


@dataclass
class Batch:
    """Rows fed through the network together.

    ``inputs`` is the (possibly corrupted) network input with dropped entries
    removed; ``targets`` holds the uncorrupted observed values and
    ``dropped`` flags, entry by entry of ``targets.data``, which observations
    the corruption zeroed.
    """

    inputs: sp.csr_matrix
    targets: sp.csr_matrix
    dropped: np.ndarray

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_items(self) -> int:
        return self.inputs.shape[1]

    def entry_rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.size), np.diff(self.targets.indptr))

    @classmethod
    def uncorrupted(cls, rows: sp.csr_matrix) -> "Batch":
        rows = sp.csr_matrix(rows)
        return cls(rows, rows, np.zeros(rows.nnz, dtype=bool))

    @classmethod
    def from_vectors(
        cls,
        inputs: Sequence[SparseVector],
        targets: Sequence[SparseVector] | None = None,
        dropped: Sequence[Iterable[int]] | None = None,
    ) -> "Batch":
        x = _stack(inputs)
        t = x if targets is None else _stack(targets)
        if t.shape != x.shape:
            raise DimensionError("inputs and targets differ in shape")
        mask = np.zeros(t.nnz, dtype=bool)
        if dropped is not None:
            for i, d in enumerate(dropped):
                a, b = t.indptr[i], t.indptr[i + 1]
                mask[a:b] = np.isin(t.indices[a:b], np.fromiter(d, dtype=np.int64))
        return cls(x, t, mask)


def _stack(vectors: Sequence[SparseVector]) -> sp.csr_matrix:
    if not vectors:
        raise DimensionError("empty batch")
    dim = vectors[0].dim
    if any(v.dim != dim for v in vectors):
        raise DimensionError("vectors in a batch must share their dimension")
    indptr = np.concatenate([[0], np.cumsum([len(v) for v in vectors])])
    indices = np.concatenate([v.indices for v in vectors])
    data = np.concatenate([v.values for v in vectors])
    return sp.csr_matrix((data, indices, indptr), shape=(len(vectors), dim))


def _check_q(q: float) -> None:
    if not 0 <= q < 1:
        raise ConfigError(f"dropout ratio must lie in [0, 1), got {q}")


def corrupt(u: SparseVector, q: float, rng: np.random.Generator) -> tuple[SparseVector, np.ndarray]:
    """Drop each observed entry with probability ``q``, rescale survivors by
    ``1/(1-q)``. Returns the corrupted vector and the dropped item indices."""
    _check_q(q)
    if q == 0 or len(u) == 0:
        return u, np.empty(0, dtype=np.int64)
    drop = rng.random(len(u)) < q
    kept = SparseVector(u.dim, u.indices[~drop], u.values[~drop] / (1.0 - q))
    return kept, u.indices[drop]


def corrupt_rows(rows: sp.csr_matrix, q: float, rng: np.random.Generator) -> Batch:
    """Batch version of :func:`corrupt`; consumes the random stream in the
    same order as corrupting the rows one at a time."""
    _check_q(q)
    rows = sp.csr_matrix(rows)
    if q == 0 or rows.nnz == 0:
        return Batch.uncorrupted(rows)
    drop = rng.random(rows.nnz) < q
    keep = ~drop
    kept_before = np.concatenate([[0], np.cumsum(keep)])
    inputs = sp.csr_matrix(
        (rows.data[keep] / (1.0 - q), rows.indices[keep], kept_before[rows.indptr]),
        shape=rows.shape,
    )
    return Batch(inputs, rows, drop)


# ------------------------------------------------------------------------ forward


@dataclass
class ForwardTrace:
    """Activations of one forward pass.

    ``hidden[k]`` is the activation after layer ``k+1`` (``z^1 .. z^{L-1}``).
    ``output`` is ``z^L`` either dense ``(B, N)`` or, when ``dense`` is false,
    only at the entries of ``batch.targets`` in CSR order.
    """

    params: ModelParams
    batch: Batch
    mode: str
    hidden: list[np.ndarray]
    output: np.ndarray
    dense: bool
    linear_output: bool = False

    def predictions(self) -> np.ndarray:
        return reshape_output(self.output, self.mode)

    def predictions_at_targets(self) -> np.ndarray:
        if self.dense:
            t = self.batch.targets
            return reshape_output(self.output[self.batch.entry_rows(), t.indices], self.mode)
        return self.predictions()

    @property
    def observed(self) -> list[np.ndarray]:
        t = self.batch.targets
        return [t.indices[t.indptr[i] : t.indptr[i + 1]] for i in range(self.batch.size)]

    @property
    def dropped_sets(self) -> list[np.ndarray]:
        t = self.batch.targets
        out = []
        for i in range(self.batch.size):
            a, b = t.indptr[i], t.indptr[i + 1]
            out.append(t.indices[a:b][self.batch.dropped[a:b]])
        return out


def reshape_output(z: np.ndarray, mode: str) -> np.ndarray:
    if mode == "explicit":
        return RESHAPE_SCALE * z + RESHAPE_SHIFT
    return z


def encode(params: ModelParams, inputs: sp.csr_matrix, n_layers: int) -> list[np.ndarray]:
    """Hidden activations of the first ``n_layers`` layers.

    The first layer only touches the columns of ``W^1`` at the non-zero
    inputs.
    """
    if inputs.shape[1] != params.weights[0].shape[1]:
        raise DimensionError(
            f"input width {inputs.shape[1]} does not match first layer {params.weights[0].shape[1]}"
        )
    acts = []
    h = np.asarray(inputs @ params.weights[0].T) + params.biases[0]
    acts.append(np.tanh(h))
    for k in range(1, n_layers):
        acts.append(np.tanh(acts[-1] @ params.weights[k].T + params.biases[k]))
    return acts


def sparse_forward(
    params: ModelParams,
    batch: Batch,
    mode: str,
    *,
    dense: bool | None = None,
    linear_output: bool = False,
) -> ForwardTrace:
    """Forward a batch. By default the output is dense in implicit mode and
    restricted to the target entries in explicit mode."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    if batch.n_items != params.dims[0] or batch.targets.shape[1] != params.dims[-1]:
        raise DimensionError("batch width does not match the network")
    if dense is None:
        dense = mode == "implicit"
    L = params.n_layers
    hidden = encode(params, batch.inputs, L - 1)
    z = hidden[-1]
    W, b = params.weights[-1], params.biases[-1]
    if dense:
        a = z @ W.T + b
    else:
        rows = batch.entry_rows()
        cols = batch.targets.indices
        a = np.einsum("ek,ek->e", z[rows], W[cols]) + b[cols]
    out = a if linear_output else np.tanh(a)
    return ForwardTrace(params, batch, mode, hidden, out, dense, linear_output)


def predict_dense(
    params: ModelParams, u: SparseVector, mode: str, *, linear_output: bool = False
) -> np.ndarray:
    """Full length-N prediction for one uncorrupted row."""
    if u.dim != params.dims[0]:
        raise DimensionError(f"vector dim {u.dim} does not match network width {params.dims[0]}")
    batch = Batch.uncorrupted(_stack([u]))
    return sparse_forward(params, batch, mode, dense=True, linear_output=linear_output).predictions()[0]


def predict_matrix(
    params: ModelParams,
    rows: InteractionMatrix | sp.csr_matrix,
    mode: str,
    *,
    which: np.ndarray | None = None,
    chunk: int = 512,
) -> np.ndarray:
    """Dense predictions for many uncorrupted rows, ``chunk`` rows at a time."""
    csr = rows.to_csr() if isinstance(rows, InteractionMatrix) else sp.csr_matrix(rows)
    which = np.arange(csr.shape[0]) if which is None else np.asarray(which)
    out = np.empty((which.size, params.dims[-1]))
    for s in range(0, which.size, chunk):
        part = Batch.uncorrupted(csr[which[s : s + chunk]])
        out[s : s + chunk] = sparse_forward(params, part, mode, dense=True).predictions()
    return out


# ------------------------------------------------------------------------- losses


def _row_counts(batch: Batch) -> np.ndarray:
    return np.diff(batch.targets.indptr)


def explicit_loss(trace: ForwardTrace, alpha: float = 1.0, beta: float = 1.0) -> np.ndarray:
    """Per-row masked squared error over observed entries, dropped entries
    weighted by ``alpha`` and kept ones by ``beta``, divided by the number of
    observations of the row. Rows without observations score 0."""
    batch = trace.batch
    pred = trace.predictions_at_targets()
    err2 = (pred - batch.targets.data) ** 2
    w = np.where(batch.dropped, alpha, beta)
    n = _row_counts(batch)
    per_row = np.bincount(batch.entry_rows(), w * err2, minlength=batch.size)
    return np.divide(per_row, n, out=np.zeros(batch.size), where=n > 0)


def _confidence_weights(confidence: ConfidenceVector | np.ndarray | None, n_items: int) -> np.ndarray:
    if confidence is None:
        raise ConfigError("implicit mode needs a confidence vector")
    c = confidence.weights if isinstance(confidence, ConfidenceVector) else np.asarray(confidence, dtype=float)
    if c.shape != (n_items,):
        raise DimensionError(f"confidence has length {c.size}, expected {n_items}")
    return c


def implicit_loss(trace: ForwardTrace, confidence: ConfidenceVector | np.ndarray) -> np.ndarray:
    """Per-row squared error on observed entries plus confidence-weighted
    squared score on every unobserved item."""
    if not trace.dense:
        raise ConfigError("implicit loss needs a dense forward trace")
    batch = trace.batch
    c = _confidence_weights(confidence, batch.n_items)
    pred = trace.predictions()
    rows, cols = batch.entry_rows(), batch.targets.indices
    p_obs = pred[rows, cols]
    per_row = (pred * pred) @ c
    per_row -= np.bincount(rows, c[cols] * p_obs**2, minlength=batch.size)
    per_row += np.bincount(rows, (p_obs - batch.targets.data) ** 2, minlength=batch.size)
    return per_row


def batch_loss(
    trace: ForwardTrace, config: TrainConfig, confidence: ConfidenceVector | np.ndarray | None = None
) -> np.ndarray:
    if config.mode == "explicit":
        return explicit_loss(trace, config.alpha, config.beta)
    return implicit_loss(trace, confidence)


def l2_penalty(params: ModelParams, weight_decay: float, layers: Iterable[int] | None = None) -> float:
    layers = range(params.n_layers) if layers is None else layers
    return 0.5 * weight_decay * sum(
        float(np.sum(params.weights[k] ** 2) + np.sum(params.biases[k] ** 2)) for k in layers
    )


# ----------------------------------------------------------------------- backward


def _output_delta(trace: ForwardTrace, config: TrainConfig, confidence) -> np.ndarray | sp.csr_matrix:
    """Gradient of the batch-mean loss w.r.t. the output pre-activation."""
    batch = trace.batch
    B = batch.size
    rows, cols = batch.entry_rows(), batch.targets.indices

    if config.mode == "explicit":
        z = trace.output[rows, cols] if trace.dense else trace.output
        pred = reshape_output(z, "explicit")
        n = _row_counts(batch)[rows]
        w = np.where(batch.dropped, config.alpha, config.beta) / n
        g = 2.0 * w * (pred - batch.targets.data) * RESHAPE_SCALE / B
        if not trace.linear_output:
            g = g * (1.0 - z * z)
        # unobserved outputs carry no error
        return sp.csr_matrix((g, batch.targets.indices, batch.targets.indptr), shape=(B, batch.n_items))

    c = _confidence_weights(confidence, batch.n_items)
    if not trace.dense:
        raise ConfigError("implicit backward needs a dense forward trace")
    z = trace.output
    err = z * c
    err[rows, cols] = z[rows, cols] - batch.targets.data
    g = 2.0 * err / B
    if not trace.linear_output:
        g *= 1.0 - z * z
    return g


def backward(
    trace: ForwardTrace,
    config: TrainConfig,
    confidence: ConfidenceVector | np.ndarray | None = None,
    layers: Iterable[int] | None = None,
) -> list[np.ndarray | None]:
    """Gradient of ``mean(batch_loss) + weight_decay/2 * ||params||^2``.

    Returns a list aligned with :meth:`ModelParams.arrays`; entries of layers
    not listed in ``layers`` (0-based) are ``None`` and back-propagation
    stops at the lowest requested layer.
    """
    if config.mode == "implicit" and confidence is None:
        raise ConfigError("implicit mode needs a confidence vector")
    params = trace.params
    L = params.n_layers
    wanted = set(range(L)) if layers is None else set(layers)
    if not wanted or min(wanted) < 0 or max(wanted) >= L:
        raise ConfigError(f"layers must be a non-empty subset of 0..{L - 1}")
    lowest = min(wanted)
    grads: list[np.ndarray | None] = [None] * (2 * L)
    lam = config.weight_decay

    def below(k):
        return trace.batch.inputs if k == 0 else trace.hidden[k - 1]

    delta = _output_delta(trace, config, confidence)
    k = L - 1
    while True:
        if k in wanted:
            h = below(k)
            if sp.issparse(delta):
                gw = np.asarray(delta.T @ h)
                gb = np.asarray(delta.sum(axis=0)).ravel()
            elif sp.issparse(h):
                gw = np.asarray(h.T @ delta).T
                gb = delta.sum(axis=0)
            else:
                gw = delta.T @ h
                gb = delta.sum(axis=0)
            grads[2 * k] = gw + lam * params.weights[k]
            grads[2 * k + 1] = gb + lam * params.biases[k]
        if k == lowest:
            break
        upstream = np.asarray(delta @ params.weights[k])
        z = trace.hidden[k - 1]
        delta = upstream * (1.0 - z * z)
        k -= 1
    return grads


# ----------------------------------------------------------------------- training


EpochCallback = Callable[[dict], None]


def train_epoch(
    params: ModelParams,
    train: InteractionMatrix,
    config: TrainConfig,
    rng: np.random.Generator,
    optimizer: AdamState,
    confidence: ConfidenceVector | np.ndarray | None = None,
    layers: Iterable[int] | None = None,
) -> tuple[ModelParams, float]:
    """One pass over the non-empty training rows in shuffled mini-batches.

    Returns the parameters (updated in place) and the mean per-row loss,
    computed before each batch's update and excluding the weight penalty.
    """
    if train.n_items != params.dims[0]:
        raise DimensionError(f"training matrix has {train.n_items} columns, network expects {params.dims[0]}")
    active = np.flatnonzero(train.row_lengths() > 0)
    if active.size == 0:
        raise ConfigError("training set has no observations")
    if config.mode == "implicit" and confidence is None:
        raise ConfigError("implicit mode needs a confidence vector")
    layers = None if layers is None else sorted(set(layers))
    order = rng.permutation(active)
    csr = train.to_csr()
    arrays = params.arrays()
    total = 0.0
    for s in range(0, order.size, config.batch_size):
        batch = corrupt_rows(csr[order[s : s + config.batch_size]], config.q, rng)
        trace = sparse_forward(params, batch, config.mode)
        total += float(batch_loss(trace, config, confidence).sum())
        grads = backward(trace, config, confidence, layers)
        adam_step(arrays, grads, optimizer)
    return params, total / order.size


def new_optimizer(params: ModelParams, config: TrainConfig) -> AdamState:
    return AdamState.for_params(params.arrays(), lr=config.learning_rate)
