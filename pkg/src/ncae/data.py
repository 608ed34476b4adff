"""Sparse interaction data: loading, binarising, splitting, popularity
confidence and sparsity-aware augmentation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError, DimensionError, ParseError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SparseVector:
    """A length-``dim`` vector stored as sorted indices and non-zero values."""

    dim: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        if idx.shape != val.shape or idx.ndim != 1:
            raise DimensionError("indices and values must be 1-d and equally long")
        if idx.size:
            if np.any(np.diff(idx) <= 0):
                raise DataError("indices must be strictly increasing")
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise DimensionError(f"index out of range for dim {self.dim}")

    def __len__(self) -> int:
        return int(self.indices.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out


@dataclass(frozen=True)
class InteractionMatrix:
    """Users x items observations in CSR layout.

    Rows are sorted by item index. ``order`` keeps the original insertion
    position of each observation (file order), ``timestamps`` is optional.
    ``origin[i]`` is the real user a synthetic row was derived from, or -1.
    """

    n_users: int
    n_items: int
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    order: np.ndarray
    timestamps: np.ndarray | None = None
    user_ids: tuple[str, ...] | None = None
    item_ids: tuple[str, ...] | None = None
    origin: np.ndarray | None = None
    _csr: sp.csr_matrix | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_triples(
        cls,
        users: Sequence[int],
        items: Sequence[int],
        values: Sequence[float],
        n_users: int,
        n_items: int,
        timestamps: Sequence[float] | None = None,
        order: Sequence[int] | None = None,
        user_ids: Sequence[str] | None = None,
        item_ids: Sequence[str] | None = None,
        origin: Sequence[int] | None = None,
    ) -> "InteractionMatrix":
        u = np.asarray(users, dtype=np.int64)
        j = np.asarray(items, dtype=np.int64)
        v = np.asarray(values, dtype=np.float64)
        if not (u.shape == j.shape == v.shape):
            raise DimensionError("users, items and values must be equally long")
        if u.size and (u.min() < 0 or u.max() >= n_users):
            raise DimensionError("user index out of range")
        if j.size and (j.min() < 0 or j.max() >= n_items):
            raise DimensionError("item index out of range")
        if np.any(v == 0) or not np.all(np.isfinite(v)):
            raise DataError("observed values must be finite and non-zero")
        seq = np.arange(u.size, dtype=np.int64) if order is None else np.asarray(order, dtype=np.int64)
        ts = None if timestamps is None else np.asarray(timestamps, dtype=np.float64)

        perm = np.lexsort((j, u))
        u, j, v, seq = u[perm], j[perm], v[perm], seq[perm]
        if ts is not None:
            ts = ts[perm]
        dup = (np.diff(u) == 0) & (np.diff(j) == 0)
        if np.any(dup):
            k = int(np.flatnonzero(dup)[0])
            raise DataError(f"duplicate observation for user {u[k]}, item {j[k]}")
        indptr = np.zeros(n_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(u, minlength=n_users), out=indptr[1:])
        return cls(
            n_users=n_users,
            n_items=n_items,
            indptr=indptr,
            indices=j,
            values=v,
            order=seq,
            timestamps=ts,
            user_ids=None if user_ids is None else tuple(user_ids),
            item_ids=None if item_ids is None else tuple(item_ids),
            origin=None if origin is None else np.asarray(origin, dtype=np.int64),
        )

    @classmethod
    def from_dense(cls, dense: np.ndarray, **kw) -> "InteractionMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        u, j = np.nonzero(dense)
        return cls.from_triples(u, j, dense[u, j], dense.shape[0], dense.shape[1], **kw)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    @property
    def n_real_users(self) -> int:
        if self.origin is None:
            return self.n_users
        return int(np.count_nonzero(self.origin < 0))

    def row_users(self) -> np.ndarray:
        """User index of every stored observation."""
        return np.repeat(np.arange(self.n_users), np.diff(self.indptr))

    def row_lengths(self) -> np.ndarray:
        return np.diff(self.indptr)

    def row(self, i: int) -> SparseVector:
        a, b = self.indptr[i], self.indptr[i + 1]
        return SparseVector(self.n_items, self.indices[a:b], self.values[a:b])

    def item_counts(self) -> np.ndarray:
        """``|R_j|`` for every item."""
        return np.bincount(self.indices, minlength=self.n_items)

    def to_csr(self) -> sp.csr_matrix:
        if self._csr is None:
            m = sp.csr_matrix(
                (self.values, self.indices, self.indptr), shape=(self.n_users, self.n_items)
            )
            m.has_sorted_indices = True
            object.__setattr__(self, "_csr", m)
        return self._csr

    def to_dense(self) -> np.ndarray:
        return self.to_csr().toarray()

    def triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.row_users(), self.indices.copy(), self.values.copy()

    def subset(self, mask: np.ndarray) -> "InteractionMatrix":
        """Keep the observations selected by a boolean mask over stored entries."""
        u = self.row_users()[mask]
        return InteractionMatrix.from_triples(
            u,
            self.indices[mask],
            self.values[mask],
            self.n_users,
            self.n_items,
            timestamps=None if self.timestamps is None else self.timestamps[mask],
            order=self.order[mask],
            user_ids=self.user_ids,
            item_ids=self.item_ids,
            origin=self.origin,
        )

    def transpose(self) -> "InteractionMatrix":
        u = self.row_users()
        return InteractionMatrix.from_triples(
            self.indices,
            u,
            self.values,
            self.n_items,
            self.n_users,
            timestamps=self.timestamps,
            order=self.order,
            user_ids=self.item_ids,
            item_ids=self.user_ids,
        )

    def with_values(self, values: np.ndarray) -> "InteractionMatrix":
        return InteractionMatrix(
            self.n_users, self.n_items, self.indptr, self.indices, np.asarray(values, dtype=np.float64),
            self.order, self.timestamps, self.user_ids, self.item_ids, self.origin,
        )


def load_ratings(path: str | Path, sep: str = "\t") -> InteractionMatrix:
    """Read ``user<sep>item<sep>rating[<sep>timestamp]`` lines.

    User and item labels are mapped to contiguous 0-based indices in order of
    first appearance. Blank lines and ``#`` comments are skipped.
    """
    if sep in ("tab", "\\t"):
        sep = "\t"
    users: list[int] = []
    items: list[int] = []
    ratings: list[float] = []
    stamps: list[float] = []
    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    seen: dict[tuple[int, int], int] = {}
    has_ts: bool | None = None

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(sep)]
            if len(parts) not in (3, 4):
                raise ParseError(f"expected 3 or 4 fields, got {len(parts)}", lineno)
            try:
                rating = float(parts[2])
                ts = float(parts[3]) if len(parts) == 4 else None
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if has_ts is None:
                has_ts = ts is not None
            elif has_ts != (ts is not None):
                raise ParseError("timestamp column present on some lines only", lineno)
            if not np.isfinite(rating) or rating == 0:
                raise ParseError(f"invalid rating {parts[2]!r}", lineno)
            u = user_map.setdefault(parts[0], len(user_map))
            j = item_map.setdefault(parts[1], len(item_map))
            if (u, j) in seen:
                raise DataError(
                    f"line {lineno}: duplicate pair ({parts[0]}, {parts[1]}), first seen on line {seen[u, j]}"
                )
            seen[u, j] = lineno
            users.append(u)
            items.append(j)
            ratings.append(rating)
            if ts is not None:
                stamps.append(ts)

    return InteractionMatrix.from_triples(
        users,
        items,
        ratings,
        len(user_map),
        len(item_map),
        timestamps=stamps if has_ts else None,
        user_ids=list(user_map),
        item_ids=list(item_map),
    )


def write_ratings(m: InteractionMatrix, path: str | Path, sep: str = "\t") -> None:
    """Inverse of :func:`load_ratings` (rows in original file order)."""
    u, j, v = m.triples()
    uid = m.user_ids or tuple(str(i) for i in range(m.n_users))
    iid = m.item_ids or tuple(str(i) for i in range(m.n_items))
    with open(path, "w", encoding="utf-8") as fh:
        for k in np.argsort(m.order, kind="stable"):
            fields = [uid[u[k]], iid[j[k]], repr(float(v[k]))]
            if m.timestamps is not None:
                fields.append(repr(float(m.timestamps[k])))
            fh.write(sep.join(fields) + "\n")


def binarize(m: InteractionMatrix) -> InteractionMatrix:
    return m.with_values(np.ones_like(m.values))


@dataclass(frozen=True)
class SplitSpec:
    protocol: str = "ratio"  # "ratio" | "leave-one-out"
    train: float = 0.8
    valid: float = 0.1
    test: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.protocol not in ("ratio", "leave-one-out"):
            raise ConfigError(f"unknown split protocol {self.protocol!r}")
        if self.protocol == "ratio":
            fr = (self.train, self.valid, self.test)
            if min(fr) < 0 or self.train <= 0 or abs(sum(fr) - 1.0) > 1e-9:
                raise ConfigError(f"split fractions must be non-negative and sum to 1, got {fr}")


class Split(NamedTuple):
    train: InteractionMatrix
    valid: InteractionMatrix
    test: InteractionMatrix
    excluded_users: int = 0


def split(m: InteractionMatrix, spec: SplitSpec) -> Split:
    """Partition observations into train/valid/test.

    Leave-one-out holds out each user's latest interaction (timestamp, or
    last line in file order when there are none) for test and one random
    remaining interaction for validation. Users with fewer than three
    observations keep everything in train and are counted in
    ``excluded_users``.
    """
    rng = np.random.default_rng(spec.seed)
    part = np.zeros(m.nnz, dtype=np.int8)  # 0 train, 1 valid, 2 test
    excluded = 0

    if spec.protocol == "ratio":
        if m.nnz == 0:
            raise DataError("cannot split an empty matrix")
        n_test = int(round(m.nnz * spec.test))
        n_valid = int(round(m.nnz * spec.valid))
        perm = rng.permutation(m.nnz)
        part[perm[:n_test]] = 2
        part[perm[n_test : n_test + n_valid]] = 1
    else:
        for i in range(m.n_users):
            a, b = int(m.indptr[i]), int(m.indptr[i + 1])
            if b - a < 3:
                if b > a:
                    excluded += 1
                continue
            pos = np.arange(a, b)
            # latest by timestamp, ties and missing timestamps resolved by file order
            if m.timestamps is not None:
                latest = pos[np.lexsort((m.order[a:b], m.timestamps[a:b]))[-1]]
            else:
                latest = pos[np.argmax(m.order[a:b])]
            part[latest] = 2
            rest = pos[pos != latest]
            part[rest[rng.integers(rest.size)]] = 1
        if excluded:
            log.warning("leave-one-out: %d users with fewer than 3 observations kept in train only", excluded)

    return Split(m.subset(part == 0), m.subset(part == 1), m.subset(part == 2), excluded)


@dataclass(frozen=True)
class ConfidenceVector:
    weights: np.ndarray
    c0: float
    omega: float

    def __len__(self) -> int:
        return int(self.weights.size)


def compute_confidence(m: InteractionMatrix, c0: float, omega: float) -> ConfidenceVector:
    """Popularity confidence ``c_j = c0 * f_j**omega / sum_k f_k**omega``.

    Items never observed get zero weight, whatever ``omega`` is.
    """
    if m.n_items < 1:
        raise DimensionError("confidence needs at least one item")
    if c0 < 0:
        raise ConfigError("c0 must be non-negative")
    counts = m.item_counts().astype(np.float64)
    total = counts.sum()
    if total == 0:
        raise DataError("cannot compute item popularity of an all-zero matrix")
    freq = counts / total
    powered = np.zeros_like(freq)
    seen = counts > 0
    powered[seen] = freq[seen] ** omega
    return ConfidenceVector(c0 * powered / powered.sum(), float(c0), float(omega))


def popularity_order(counts: np.ndarray) -> np.ndarray:
    """Item indices by descending count, ascending index on ties."""
    counts = np.asarray(counts)
    return np.lexsort((np.arange(counts.size), -counts))


def augment(
    m: InteractionMatrix,
    epsilon: float,
    p: float,
    popularity: ConfidenceVector | np.ndarray,
    min_remaining: int = 1,
) -> InteractionMatrix:
    """Append one thinned copy of every sparse user.

    A user qualifies when ``|R_i| / N < epsilon``; the copy drops the
    ``floor(|R_i| * p)`` most popular items of the row. Copies that would drop
    nothing, or keep fewer than ``min_remaining`` items, are skipped.
    """
    if not 0 < epsilon <= 1:
        raise ConfigError(f"epsilon must lie in (0, 1], got {epsilon}")
    if not 0 < p < 1:
        raise ConfigError(f"drop ratio must lie in (0, 1), got {p}")
    pop = popularity.weights if isinstance(popularity, ConfidenceVector) else np.asarray(popularity)
    if pop.size != m.n_items:
        raise DimensionError("popularity length differs from item count")
    # rank[j] = position of item j in the global popularity order
    rank = np.empty(m.n_items, dtype=np.int64)
    rank[popularity_order(pop)] = np.arange(m.n_items)

    users, items, values = list(m.triples())
    origin = list(m.origin) if m.origin is not None else [-1] * m.n_users
    user_ids = list(m.user_ids) if m.user_ids is not None else None
    new_u, new_j, new_v = [], [], []
    next_row = m.n_users
    for i in range(m.n_users):
        a, b = int(m.indptr[i]), int(m.indptr[i + 1])
        n = b - a
        if n == 0 or n / m.n_items >= epsilon:
            continue
        n_drop = int(np.floor(n * p))
        if n_drop == 0 or n - n_drop < min_remaining:
            continue
        row_items = m.indices[a:b]
        keep = np.sort(np.argsort(rank[row_items], kind="stable")[n_drop:])
        new_u.append(np.full(keep.size, next_row))
        new_j.append(row_items[keep])
        new_v.append(m.values[a:b][keep])
        origin.append(i if m.origin is None or m.origin[i] < 0 else int(m.origin[i]))
        if user_ids is not None:
            user_ids.append(f"{user_ids[i]}'")
        next_row += 1

    if next_row == m.n_users:
        return m
    return InteractionMatrix.from_triples(
        np.concatenate([users, *new_u]),
        np.concatenate([items, *new_j]),
        np.concatenate([values, *new_v]),
        next_row,
        m.n_items,
        user_ids=user_ids,
        item_ids=m.item_ids,
        origin=origin,
    )
