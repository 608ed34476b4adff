"""End-to-end training and evaluation driven by a :class:`RunConfig`."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    ConfidenceVector,
    InteractionMatrix,
    Split,
    SplitSpec,
    augment,
    binarize,
    compute_confidence,
    load_ratings,
    split,
)
from .errors import CompatibilityError, ConfigError, UnknownUserError
from .evaluation import EvalReport, evaluate_leave_one_out, evaluate_rmse, rank_items, score_rows
from .model import ModelParams, TrainConfig, predict_dense
from .pretrain import PretrainPlan, fine_tune, pretrain

log = logging.getLogger(__name__)

# knobs that only make sense for implicit feedback
IMPLICIT_ONLY = ("c0", "omega", "epsilon", "drop_ratio", "min_remaining", "augment")


@dataclass
class RunConfig:
    data: str | None = None
    sep: str = "\t"
    mode: str = "explicit"
    orientation: str | None = None
    hidden: list[int] | None = None
    q: float = 0.5
    alpha: float = 1.0
    beta: float = 1.0
    weight_decay: float | None = None
    batch_size: int = 128
    epochs: int = 30
    learning_rate: float = 1e-3
    c0: float = 512.0
    omega: float = 0.5
    epsilon: float = 0.001
    drop_ratio: float = 0.8
    min_remaining: int = 1
    augment: bool = True
    sr_epochs: int = 10
    dr_epochs: int = 10
    v_epochs: int = 10
    pretrain: bool = True
    split: str | None = None
    fractions: list[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    cutoffs: list[int] = field(default_factory=lambda: [100])
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        # defaults differ between the two settings
        explicit = self.mode == "explicit"
        if self.orientation is None:
            self.orientation = "item" if explicit else "user"
        if self.hidden is None:
            self.hidden = [500, 500] if explicit else [128]
        if self.weight_decay is None:
            self.weight_decay = 2e-4 if explicit else 0.01
        if self.split is None:
            self.split = "ratio" if explicit else "leave-one-out"
        self.hidden = [int(h) for h in self.hidden]
        self.cutoffs = [int(c) for c in self.cutoffs]
        self.fractions = [float(f) for f in self.fractions]

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self, explicit_keys: set[str] = frozenset()) -> None:
        """Reject inconsistent settings; ``explicit_keys`` are the keys the
        user actually set (as opposed to defaults)."""
        tc = self.train_config()  # range checks
        if self.mode == "explicit":
            bad = sorted(k for k in IMPLICIT_ONLY if k in explicit_keys)
            if bad:
                raise ConfigError(f"explicit mode does not take {', '.join('--' + b.replace('_', '-') for b in bad)}")
        else:
            if self.orientation != "user":
                raise ConfigError("implicit mode is user-based only")
            if self.split != "leave-one-out":
                raise ConfigError("implicit mode is evaluated with the leave-one-out protocol")
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError("hidden layer widths must be positive")
        if not self.cutoffs or min(self.cutoffs) < 1:
            raise ConfigError("cutoffs must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        self.split_spec()
        if self.augment and tc.mode == "implicit":
            if not 0 < self.epsilon <= 1 or not 0 < self.drop_ratio < 1:
                raise ConfigError("augmentation needs epsilon in (0, 1] and drop ratio in (0, 1)")

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            mode=self.mode,
            q=self.q,
            alpha=self.alpha,
            beta=self.beta,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            c0=self.c0,
            omega=self.omega,
            epsilon=self.epsilon,
            drop_ratio=self.drop_ratio,
            min_remaining=self.min_remaining,
            augment=self.augment and self.mode == "implicit",
            orientation=self.orientation,
            seed=self.seed,
        )

    def plan(self) -> PretrainPlan:
        on = self.pretrain
        return PretrainPlan(self.sr_epochs, self.dr_epochs, self.v_epochs, sr=on, dr=on, v=on)

    def split_spec(self) -> SplitSpec:
        tr, va, te = self.fractions
        return SplitSpec(self.split, tr, va, te, seed=self.seed)


@dataclass
class Prepared:
    """Everything derived from the raw data before training."""

    matrix: InteractionMatrix
    parts: Split
    train: InteractionMatrix  # after augmentation, still user-major
    confidence: ConfidenceVector | None
    synthetic_users: int

    def model_rows(self, orientation: str) -> InteractionMatrix:
        return self.train if orientation == "user" else self.train.transpose()


def prepare(run: RunConfig, matrix: InteractionMatrix | None = None) -> Prepared:
    """Load, binarise (implicit), split, then derive confidence and augment
    from the training part only."""
    if matrix is None:
        if run.data is None:
            raise ConfigError("no dataset given")
        matrix = load_ratings(run.data, run.sep)
    if run.mode == "implicit":
        matrix = binarize(matrix)
    parts = split(matrix, run.split_spec())
    train, confidence, added = parts.train, None, 0
    if run.mode == "implicit":
        confidence = compute_confidence(train, run.c0, run.omega)
        if run.augment:
            train = augment(train, run.epsilon, run.drop_ratio, confidence, run.min_remaining)
            added = train.n_users - parts.train.n_users
    return Prepared(matrix, parts, train, confidence, added)


def evaluate_part(
    params: ModelParams, prep: Prepared, run: RunConfig, part: str = "test", cutoffs: list[int] | None = None
) -> list[EvalReport]:
    """Metrics of ``params`` on the ``valid`` or ``test`` part.

    Ranking on the test part also excludes the validation item.
    """
    target = prep.parts.test if part == "test" else prep.parts.valid
    if run.mode == "explicit":
        return [evaluate_rmse(params, prep.parts.train, target, run.orientation)]
    exclude = prep.parts.valid if part == "test" else None
    return evaluate_leave_one_out(
        params, prep.parts.train, target, cutoffs or run.cutoffs, exclude, "implicit", run.orientation
    )


def report_fields(reports: list[EvalReport], prefix: str) -> dict:
    out = {}
    for r in reports:
        key = f"{prefix}_{r.metric}" + ("" if r.cutoff is None else f"@{r.cutoff}")
        out[key] = r.value
    return out


def run_train(
    run: RunConfig,
    checkpoint_path: str | Path,
    emit: Callable[[dict], None] = lambda rec: None,
    matrix: InteractionMatrix | None = None,
) -> Checkpoint:
    """Full training pipeline; ``emit`` receives structured log records."""
    run.validate()
    prep = prepare(run, matrix)
    m = prep.matrix
    emit({"event": "data", "users": m.n_users, "items": m.n_items, "observations": m.nnz})
    emit({
        "event": "split",
        "protocol": run.split,
        "train": prep.parts.train.nnz,
        "valid": prep.parts.valid.nnz,
        "test": prep.parts.test.nnz,
        "excluded_users": prep.parts.excluded_users,
    })
    if run.mode == "implicit":
        emit({"event": "augment", "enabled": run.augment, "synthetic_users": prep.synthetic_users})

    config = run.train_config()
    rows = prep.model_rows(run.orientation)
    rng = np.random.default_rng(run.seed)
    params = ModelParams.init([rows.n_items, *run.hidden, rows.n_items], rng)

    def on_epoch(rec: dict) -> None:
        emit({"event": "epoch", **rec})

    pretrain(params, rows, config, run.plan(), rng, prep.confidence, on_epoch)

    def validate(p: ModelParams) -> dict:
        if prep.parts.valid.nnz == 0:
            return {}
        return report_fields(evaluate_part(p, prep, run, "valid"), "valid")

    fine_tune(params, rows, config, rng, prep.confidence, on_epoch, validate)
    if prep.parts.test.nnz:
        emit({"event": "final", **report_fields(evaluate_part(params, prep, run, "test"), "test")})

    ck = Checkpoint(
        params=params,
        mode=run.mode,
        orientation=run.orientation,
        config=config.to_dict(),
        run=run.to_dict(),
        user_ids=list(m.user_ids) if m.user_ids is not None else None,
        item_ids=list(m.item_ids) if m.item_ids is not None else None,
    )
    save_checkpoint(ck, checkpoint_path)
    emit({"event": "checkpoint", "path": str(checkpoint_path)})
    return ck


def restore(checkpoint_path: str | Path, data: str | None = None) -> tuple[Checkpoint, RunConfig, Prepared]:
    """Load a checkpoint and rebuild its data split, checking compatibility."""
    ck = load_checkpoint(checkpoint_path)
    run = RunConfig.from_dict(ck.run)
    if data is not None:
        run.data = data
    prep = prepare(run)
    m = prep.matrix
    width = m.n_items if run.orientation == "user" else m.n_users
    if ck.params.dims[0] != width:
        raise CompatibilityError(f"checkpoint expects {ck.params.dims[0]} inputs, dataset gives {width}")
    if ck.user_ids is not None and list(m.user_ids or ()) != ck.user_ids:
        raise CompatibilityError("dataset users differ from the checkpoint's index map")
    if ck.item_ids is not None and list(m.item_ids or ()) != ck.item_ids:
        raise CompatibilityError("dataset items differ from the checkpoint's index map")
    return ck, run, prep


def recommend(ck: Checkpoint, run: RunConfig, prep: Prepared, user: str, m: int) -> list[tuple[str, float]]:
    """Top-``m`` unseen items for ``user`` with their predicted scores."""
    ids = ck.user_ids or [str(i) for i in range(prep.matrix.n_users)]
    try:
        u = ids.index(user)
    except ValueError:
        raise UnknownUserError(f"unknown user {user!r}") from None
    train = prep.parts.train
    if run.orientation == "user":
        scores = predict_dense(ck.params, train.row(u), run.mode)
    else:
        scores = score_rows(ck.params, train, run.mode, "item", [u])[0]
    seen = train.indices[train.indptr[u] : train.indptr[u + 1]]
    items = ck.item_ids or [str(j) for j in range(prep.matrix.n_items)]
    return [(items[j], float(scores[j])) for j in rank_items(scores, seen)[:m]]
