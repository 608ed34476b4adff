"""Rating and ranking metrics, the leave-one-out protocol and a popularity
baseline."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .data import InteractionMatrix
from .errors import EvalError
from .model import ModelParams, predict_matrix


@dataclass
class EvalReport:
    mode: str
    metric: str
    value: float
    n_users: int
    cutoff: int | None = None
    per_user: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    users: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64), repr=False)
    skipped: int = 0

    def to_record(self) -> dict:
        return {"metric": self.metric, "M": self.cutoff, "value": self.value, "users": self.n_users}


def write_reports(reports: Iterable[EvalReport], out: IO[str], per_user: bool = False) -> None:
    """One JSON record per metric/cutoff; optionally per-user detail lines."""
    for r in reports:
        out.write(json.dumps(r.to_record()) + "\n")
        if per_user:
            for u, v in zip(r.users.tolist(), r.per_user.tolist()):
                out.write(json.dumps({"metric": r.metric, "M": r.cutoff, "user": u, "value": v}) + "\n")


# ------------------------------------------------------------------------- scores


def score_rows(
    params: ModelParams,
    train: InteractionMatrix,
    mode: str,
    orientation: str = "user",
    users: Sequence[int] | None = None,
) -> np.ndarray:
    """Dense ``(len(users), n_items)`` scores, each user's input being its
    training row (or, item-based, each item's training column)."""
    users = np.arange(train.n_users) if users is None else np.asarray(users)
    if orientation == "user":
        return predict_matrix(params, train, mode, which=users)
    return predict_matrix(params, train.transpose(), mode).T[users]


def predict_entries(
    params: ModelParams,
    train: InteractionMatrix,
    users: np.ndarray,
    items: np.ndarray,
    mode: str,
    orientation: str = "user",
) -> np.ndarray:
    """Predictions at ``(users[k], items[k])`` pairs."""
    if orientation == "user":
        rows, cols, source = users, items, train
    else:
        rows, cols, source = items, users, train.transpose()
    uniq, inv = np.unique(rows, return_inverse=True)
    return predict_matrix(params, source, mode, which=uniq)[inv, cols]


# ------------------------------------------------------------------------- metrics


def rmse(predicted: np.ndarray, test: InteractionMatrix, mode: str = "explicit") -> EvalReport:
    """Root mean squared error over the stored entries of ``test``; the
    predictions are aligned with those entries."""
    if mode != "explicit":
        raise EvalError("RMSE is only defined for explicit feedback")
    if test.nnz == 0:
        raise EvalError("empty test set")
    predicted = np.asarray(predicted, dtype=float)
    if predicted.shape != (test.nnz,):
        raise EvalError(f"expected {test.nnz} predictions, got {predicted.shape}")
    err2 = (predicted - test.values) ** 2
    rows = test.row_users()
    counts = np.bincount(rows, minlength=test.n_users)
    users = np.flatnonzero(counts)
    per_user = np.sqrt(np.bincount(rows, err2, minlength=test.n_users)[users] / counts[users])
    return EvalReport(mode, "rmse", float(np.sqrt(err2.mean())), int(users.size), per_user=per_user, users=users)


def evaluate_rmse(
    params: ModelParams, train: InteractionMatrix, test: InteractionMatrix, orientation: str = "user"
) -> EvalReport:
    u, j, _ = test.triples()
    return rmse(predict_entries(params, train, u, j, "explicit", orientation), test)


def rank_items(scores: np.ndarray, exclude: Iterable[int] = ()) -> np.ndarray:
    """Items by descending score, ascending index on ties, minus ``exclude``."""
    scores = np.asarray(scores)
    order = np.lexsort((np.arange(scores.size), -scores))
    ex = np.fromiter(exclude, dtype=np.int64)
    if ex.size:
        order = order[~np.isin(order, ex)]
    return order


def hr_ndcg_at_m(ranked: Sequence[int], held_out: int, m: int) -> tuple[int, float]:
    top = np.asarray(ranked)[:m]
    hit = np.flatnonzero(top == held_out)
    if hit.size == 0:
        return 0, 0.0
    return 1, float(1.0 / np.log2(hit[0] + 2.0))


def held_out_rank(scores: np.ndarray, excluded: np.ndarray, item: int) -> int:
    """1-based position of ``item`` in :func:`rank_items` order without
    sorting; ``excluded`` is a boolean mask."""
    s = scores[item]
    idx = np.arange(scores.size)
    ahead = (scores > s) | ((scores == s) & (idx < item))
    return int(np.count_nonzero(ahead & ~excluded)) + 1


def popularity_baseline(train: InteractionMatrix) -> np.ndarray:
    if train.nnz == 0:
        raise EvalError("popularity baseline needs a non-empty training set")
    return train.item_counts().astype(float)


def leave_one_out(
    scores: np.ndarray,
    train: InteractionMatrix,
    test: InteractionMatrix,
    cutoffs: Sequence[int],
    exclude: InteractionMatrix | None = None,
    mode: str = "implicit",
) -> list[EvalReport]:
    """HR@M and NDCG@M of a precomputed score matrix.

    ``scores`` is a single item vector shared by every user, a matrix with one
    row per test user, or a matrix with one row per *evaluated* user (those
    holding a test item, in index order). Each user's training items (and ``exclude`` items)
    are removed from the ranking. Users without a test item are skipped.
    """
    counts = test.row_lengths()
    if np.any(counts > 1):
        raise EvalError("leave-one-out test sets hold at most one item per user")
    users = np.flatnonzero(counts == 1)
    skipped = int(test.n_users - users.size)
    if users.size == 0:
        raise EvalError("no user has a held-out item")
    held = test.indices[test.indptr[users]]
    shared = np.ndim(scores) == 1
    by_user = not shared and scores.shape[0] == test.n_users
    if not shared and not by_user and scores.shape[0] != users.size:
        raise EvalError(f"score matrix has {scores.shape[0]} rows, expected {test.n_users} or {users.size}")
    ranks = np.empty(users.size, dtype=np.int64)
    for k, (u, h) in enumerate(zip(users, held)):
        mask = np.zeros(train.n_items, dtype=bool)
        mask[train.indices[train.indptr[u] : train.indptr[u + 1]]] = True
        if exclude is not None:
            mask[exclude.indices[exclude.indptr[u] : exclude.indptr[u + 1]]] = True
        if mask[h]:
            raise EvalError(f"held-out item {h} of user {u} is also excluded")
        row = scores if shared else scores[u if by_user else k]
        ranks[k] = held_out_rank(row, mask, h)

    reports = []
    for m in cutoffs:
        hit = (ranks <= m).astype(float)
        ndcg = np.where(ranks <= m, 1.0 / np.log2(ranks + 1.0), 0.0)
        reports.append(EvalReport(mode, "hr", float(hit.mean()), int(users.size), m, hit, users, skipped))
        reports.append(EvalReport(mode, "ndcg", float(ndcg.mean()), int(users.size), m, ndcg, users, skipped))
    return reports


def evaluate_leave_one_out(
    params: ModelParams,
    train: InteractionMatrix,
    test: InteractionMatrix,
    cutoffs: Sequence[int],
    exclude: InteractionMatrix | None = None,
    mode: str = "implicit",
    orientation: str = "user",
) -> list[EvalReport]:
    """Rank every non-training item for each test user by the model's dense
    prediction from their training row."""
    users = np.flatnonzero(test.row_lengths() == 1)
    scores = score_rows(params, train, mode, orientation, users) if users.size else np.empty((0, train.n_items))
    return leave_one_out(scores, train, test, cutoffs, exclude, mode)
