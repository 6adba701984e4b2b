"""Generated click data with planted block structure, for tests and demos."""

from __future__ import annotations

import numpy as np

from .data import ClickDataset


def make_block_dataset(
    num_users: int = 200,
    num_items: int = 200,
    num_blocks: int = 4,
    min_clicks: int = 4,
    max_clicks: int = 40,
    in_block: float = 0.9,
    popularity_skew: float = 1.0,
    seed: int = 0,
) -> ClickDataset:
    """Users and items are cut into ``num_blocks`` equal groups.

    Each user draws an activity level log-uniformly in
    ``[min_clicks, max_clicks]`` and picks that many distinct items, a
    fraction ``in_block`` of them from their own block. Within a block,
    item ``k`` is chosen with weight ``(k + 1) ** -popularity_skew``.
    """
    rng = np.random.default_rng(seed)
    user_block = np.arange(num_users) * num_blocks // num_users
    item_block = np.arange(num_items) * num_blocks // num_items
    users, items = [], []
    for u in range(num_users):
        k = int(round(np.exp(rng.uniform(np.log(min_clicks), np.log(max_clicks)))))
        own = np.flatnonzero(item_block == user_block[u])
        other = np.flatnonzero(item_block != user_block[u])
        k_in = min(own.size, int(rng.binomial(k, in_block)))
        k_out = min(other.size, k - k_in)
        w = (np.arange(own.size) + 1.0) ** -popularity_skew
        chosen = rng.choice(own, size=k_in, replace=False, p=w / w.sum())
        noise = rng.choice(other, size=k_out, replace=False)
        picked = np.concatenate([chosen, noise])
        users.extend([u] * picked.size)
        items.extend(picked.tolist())
    return ClickDataset(
        users, items,
        [f"u{u}" for u in range(num_users)],
        [f"i{i}" for i in range(num_items)],
    )


def random_recall_expectation(split, n: int = 20) -> float:
    """Expected macro Recall@n of a uniformly random ranking of each user's candidates."""
    from .data import build_matrix, merge

    seen = build_matrix(merge(split.train, split.validation))
    test = build_matrix(split.test)
    M = split.num_items
    vals = []
    for u in np.flatnonzero(test.row_lengths() > 0):
        t = test.row(u).size
        c = M - seen.row(u).size
        vals.append(min(n, c) * t / c / min(n, t))
    return float(np.mean(vals))
