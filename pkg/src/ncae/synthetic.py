"""Deterministic toy datasets for tests and demos."""
from __future__ import annotations

import numpy as np

from .data import InteractionMatrix


def low_rank_explicit(
    n_users: int = 20,
    n_items: int = 15,
    rank: int = 2,
    density: float = 0.5,
    seed: int = 0,
    low: float = 0.5,
    high: float = 5.0,
) -> tuple[InteractionMatrix, np.ndarray]:
    """Noiseless rank-``rank`` ratings affinely mapped onto ``[low, high]``.

    Returns the observed matrix (every user and item observed at least once)
    and the full dense rating matrix.
    """
    rng = np.random.default_rng(seed)
    full = rng.normal(size=(n_users, rank)) @ rng.normal(size=(rank, n_items))
    full = low + (high - low) * (full - full.min()) / (full.max() - full.min())
    n_obs = int(round(density * n_users * n_items))
    while True:
        mask = np.zeros(n_users * n_items, dtype=bool)
        mask[rng.choice(mask.size, n_obs, replace=False)] = True
        mask = mask.reshape(n_users, n_items)
        if mask.any(axis=0).all() and mask.any(axis=1).all():
            break
    u, j = np.nonzero(mask)
    m = InteractionMatrix.from_triples(
        u, j, full[u, j], n_users, n_items,
        user_ids=[f"u{i}" for i in range(n_users)],
        item_ids=[f"i{i}" for i in range(n_items)],
    )
    return m, full


def clustered_implicit(
    n_users: int = 200,
    n_items: int = 100,
    n_clusters: int = 5,
    p_in: float = 0.35,
    p_out: float = 0.01,
    min_items: int = 3,
    seed: int = 0,
) -> tuple[InteractionMatrix, np.ndarray]:
    """Binary interactions with planted user/item clusters.

    Items are split into contiguous equal blocks; a user interacts with items
    of their own block with probability decaying from ``2*p_in`` to ~0 across
    the block (so popularity varies) and with other items at ``p_out``.
    Timestamps are a random permutation per user. Returns the matrix and
    each user's cluster.
    """
    rng = np.random.default_rng(seed)
    item_cluster = np.arange(n_items) * n_clusters // n_items
    user_cluster = rng.integers(n_clusters, size=n_users)
    pos_in_block = np.zeros(n_items)
    for c in range(n_clusters):
        idx = np.flatnonzero(item_cluster == c)
        pos_in_block[idx] = np.linspace(2 * p_in, 0.2 * p_in, idx.size)
    users, items, stamps = [], [], []
    for i in range(n_users):
        prob = np.where(item_cluster == user_cluster[i], pos_in_block, p_out)
        while True:
            row = np.flatnonzero(rng.random(n_items) < prob)
            if row.size >= min_items:
                break
        users.append(np.full(row.size, i))
        items.append(row)
        stamps.append(rng.permutation(row.size).astype(float))
    m = InteractionMatrix.from_triples(
        np.concatenate(users), np.concatenate(items), np.ones(sum(len(r) for r in items)),
        n_users, n_items, timestamps=np.concatenate(stamps),
        user_ids=[f"u{i}" for i in range(n_users)],
        item_ids=[f"i{i}" for i in range(n_items)],
    )
    return m, user_cluster


def scaling_explicit(n_users: int, n_items: int, per_user: int, seed: int = 0) -> InteractionMatrix:
    """Random half-star ratings with exactly ``per_user`` items per user."""
    rng = np.random.default_rng(seed)
    items = np.concatenate([rng.choice(n_items, per_user, replace=False) for _ in range(n_users)])
    users = np.repeat(np.arange(n_users), per_user)
    values = rng.integers(1, 11, size=users.size) * 0.5
    return InteractionMatrix.from_triples(users, items, values, n_users, n_items)
