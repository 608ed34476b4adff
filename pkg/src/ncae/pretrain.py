"""Greedy layer-wise pre-training followed by fine-tuning.

Three stages prepare a deep network before ordinary training:

* ``sr``: the first layer is trained with a throw-away decoder back to the
  item space, using the same supervised masked loss as the full model;
* ``dr``: each middle layer is trained, bottom-up, as a small autoencoder
  reconstructing the (frozen) activation of the layer below it;
* ``v``: the output layer is trained on top of the frozen hidden layers.

Each stage gets its own Adam state. Progress is reported through an optional
``on_epoch`` callback receiving ``{"stage", "epoch", "loss"}`` records.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import ConfidenceVector, InteractionMatrix
from .errors import ConfigError
from .model import (
    EpochCallback,
    ModelParams,
    TrainConfig,
    corrupt_rows,
    encode,
    new_optimizer,
    train_epoch,
)
from .numeric import AdamState, adam_step, xavier_init


@dataclass
class PretrainPlan:
    sr_epochs: int = 10
    dr_epochs: int = 10
    v_epochs: int = 10
    sr: bool = True
    dr: bool = True
    v: bool = True
    # temporary decoders from the last run, keyed by stage ("sr", "dr1", ...)
    decoders: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if min(self.sr_epochs, self.dr_epochs, self.v_epochs) < 0:
            raise ConfigError("pre-training epoch counts must be non-negative")

    @classmethod
    def disabled(cls) -> "PretrainPlan":
        return cls(sr=False, dr=False, v=False)


def _emit(on_epoch: EpochCallback | None, stage: str, epoch: int, loss: float) -> None:
    if on_epoch is not None:
        on_epoch({"stage": stage, "epoch": epoch, "loss": loss})


def pretrain_sr(
    params: ModelParams,
    train: InteractionMatrix,
    config: TrainConfig,
    plan: PretrainPlan,
    rng: np.random.Generator,
    confidence: ConfidenceVector | None = None,
    on_epoch: EpochCallback | None = None,
) -> ModelParams:
    """Train ``W^1, b^1`` through a temporary decoder ``W'^1`` (N x K_1)."""
    N, K1 = params.dims[0], params.dims[1]
    decoder_w = xavier_init(N, K1, rng)
    decoder_b = np.zeros(N)
    # shares W^1/b^1 with params, so updates land in place
    shallow = ModelParams([params.weights[0], decoder_w], [params.biases[0], decoder_b])
    opt = new_optimizer(shallow, config)
    for epoch in range(1, plan.sr_epochs + 1):
        _, loss = train_epoch(shallow, train, config, rng, opt, confidence)
        _emit(on_epoch, "sr", epoch, loss)
    plan.decoders["sr"] = (decoder_w, decoder_b)
    return params


# ------------------------------------------------------------------ stage two


def dr_loss(target: np.ndarray, recon: np.ndarray) -> float:
    """Squared reconstruction error averaged over rows and hidden units."""
    return float(np.sum((recon - target) ** 2) / target.size)


def dr_forward(ae: ModelParams, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = np.tanh(h @ ae.weights[0].T + ae.biases[0])
    r = np.tanh(z @ ae.weights[1].T + ae.biases[1])
    return z, r


def dr_backward(ae: ModelParams, h: np.ndarray, z: np.ndarray, r: np.ndarray, weight_decay: float) -> list[np.ndarray]:
    """Gradient of ``dr_loss(h, r) + weight_decay/2 * ||ae||^2``."""
    g = 2.0 * (r - h) / h.size * (1.0 - r * r)
    grads_top = [g.T @ z, g.sum(axis=0)]
    g = (g @ ae.weights[1]) * (1.0 - z * z)
    grads = [g.T @ h, g.sum(axis=0)] + grads_top
    return [gr + weight_decay * p for gr, p in zip(grads, ae.arrays())]


def pretrain_dr(
    params: ModelParams,
    train: InteractionMatrix,
    config: TrainConfig,
    plan: PretrainPlan,
    rng: np.random.Generator,
    on_epoch: EpochCallback | None = None,
) -> ModelParams:
    """Train the middle layers ``W^2 .. W^{L-1}`` one at a time.

    The layer below is frozen; its activation on the corrupted input is both
    the input and the reconstruction target of a one-hidden-layer
    autoencoder whose encoder is the layer being trained.
    """
    csr = train.to_csr()
    active = np.flatnonzero(train.row_lengths() > 0)
    if active.size == 0:
        raise ConfigError("training set has no observations")
    for k in range(1, params.n_layers - 1):
        width_in, width_out = params.dims[k], params.dims[k + 1]
        decoder_w = xavier_init(width_in, width_out, rng)
        decoder_b = np.zeros(width_in)
        ae = ModelParams([params.weights[k], decoder_w], [params.biases[k], decoder_b])
        opt = AdamState.for_params(ae.arrays(), lr=config.learning_rate)
        stage = f"dr{k}"
        for epoch in range(1, plan.dr_epochs + 1):
            order = rng.permutation(active)
            sq_sum = 0.0
            for s in range(0, order.size, config.batch_size):
                batch = corrupt_rows(csr[order[s : s + config.batch_size]], config.q, rng)
                h = encode(params, batch.inputs, k)[-1]
                z, r = dr_forward(ae, h)
                sq_sum += dr_loss(h, r) * h.shape[0]
                adam_step(ae.arrays(), dr_backward(ae, h, z, r, config.weight_decay), opt)
            _emit(on_epoch, stage, epoch, sq_sum / order.size)
        plan.decoders[stage] = (decoder_w, decoder_b)
    return params


def pretrain_v(
    params: ModelParams,
    train: InteractionMatrix,
    config: TrainConfig,
    plan: PretrainPlan,
    rng: np.random.Generator,
    confidence: ConfidenceVector | None = None,
    on_epoch: EpochCallback | None = None,
) -> ModelParams:
    """Train only the output layer; everything below stays frozen."""
    opt = new_optimizer(params, config)
    top = params.n_layers - 1
    for epoch in range(1, plan.v_epochs + 1):
        _, loss = train_epoch(params, train, config, rng, opt, confidence, layers=[top])
        _emit(on_epoch, "v", epoch, loss)
    return params


def pretrain(
    params: ModelParams,
    train: InteractionMatrix,
    config: TrainConfig,
    plan: PretrainPlan,
    rng: np.random.Generator,
    confidence: ConfidenceVector | None = None,
    on_epoch: EpochCallback | None = None,
) -> ModelParams:
    """Run the enabled stages in order."""
    plan.decoders.clear()
    if plan.sr:
        pretrain_sr(params, train, config, plan, rng, confidence, on_epoch)
    if plan.dr:
        pretrain_dr(params, train, config, plan, rng, on_epoch)
    if plan.v:
        pretrain_v(params, train, config, plan, rng, confidence, on_epoch)
    return params


def fine_tune(
    params: ModelParams,
    train: InteractionMatrix,
    config: TrainConfig,
    rng: np.random.Generator,
    confidence: ConfidenceVector | None = None,
    on_epoch: EpochCallback | None = None,
    validate: Callable[[ModelParams], dict] | None = None,
    epochs: int | None = None,
) -> ModelParams:
    """Train all layers jointly. ``validate`` results are merged into each
    epoch record."""
    opt = new_optimizer(params, config)
    for epoch in range(1, (config.epochs if epochs is None else epochs) + 1):
        _, loss = train_epoch(params, train, config, rng, opt, confidence)
        record = {"stage": "fine-tune", "epoch": epoch, "loss": loss}
        if validate is not None:
            record.update(validate(params))
        if on_epoch is not None:
            on_epoch(record)
    return params
