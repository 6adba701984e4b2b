"""Inference over a trained model: top-N recommendation, similar items, co-purchases."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import ModelParams, activate, variant_terms


@dataclass(frozen=True)
class ScoredItem:
    item: int
    score: float


def _top_k(scores: np.ndarray, candidates: np.ndarray, k: int) -> list:
    # stable sort on -score keeps ascending index among ties
    order = np.argsort(-scores[candidates], kind="stable")[:k]
    picked = candidates[order]
    return [ScoredItem(int(j), float(scores[j])) for j in picked]


class Scorer:
    """Activated item matrices cached for repeated ranking queries against one model.

    ``variant="mf"`` drops the context term and ``"embedding"`` the user
    preference term, matching the two ablations.
    """

    def __init__(self, params: ModelParams, variant: str = "npe"):
        self.params = params
        self.use_user, self.use_context = variant_terms(variant)
        self.W = activate(params.W.astype(np.float64), params.activation)
        self.V = params.V.astype(np.float64)

    def query_vector(self, u: int, context: Sequence[int]) -> np.ndarray:
        p = self.params
        if not 0 <= u < p.num_users:
            raise IndexError(f"user index {u} out of range")
        q = activate(p.H[u].astype(np.float64), p.activation) if self.use_user else np.zeros(p.dim)
        ctx = np.asarray(context, dtype=np.int64).reshape(-1)
        if self.use_context and ctx.size:
            q = q + activate(self.V[ctx].sum(axis=0), p.activation)
        return q

    def scores(self, u: int, context: Sequence[int]) -> np.ndarray:
        return self.W @ self.query_vector(u, context)

    def rank(self, u: int, context: Sequence[int], exclude: Sequence[int], n: int) -> list:
        """Top ``n`` items for user ``u`` given a context, skipping ``exclude``."""
        scores = self.scores(u, context)
        mask = np.ones(self.params.num_items, dtype=bool)
        mask[np.asarray(exclude, dtype=np.int64)] = False
        return _top_k(scores, np.flatnonzero(mask), n)


def rank_items(params, u, context, exclude, n, variant="npe") -> list:
    return Scorer(params, variant).rank(u, context, exclude, n)


def recommend_top_n(params: ModelParams, u: int, history: Sequence[int], n: int = 10, variant: str = "npe") -> list:
    """Highest-scoring unclicked items, scored with the full history as context.

    Asking for more items than there are candidates returns all of them.
    """
    history = np.asarray(history, dtype=np.int64).reshape(-1)
    if history.size and (history.min() < 0 or history.max() >= params.num_items):
        raise IndexError("history item index out of range")
    return rank_items(params, u, history, history, n, variant)


def similar_items(params: ModelParams, i: int, k: int = 5) -> list:
    """Items ranked by cosine similarity of activated embedding rows to item ``i``."""
    if not 0 <= i < params.num_items:
        raise IndexError(f"item index {i} out of range")
    W = activate(params.W.astype(np.float64), params.activation)
    norms = np.linalg.norm(W, axis=1)
    if norms[i] == 0:
        raise ValueError(f"item {i} has a zero embedding vector; similarity is undefined")
    safe = np.where(norms > 0, norms, 1.0)
    sims = (W @ W[i]) / (safe * norms[i])
    sims[norms == 0] = 0.0
    np.clip(sims, 0.0, 1.0, out=sims)
    candidates = np.flatnonzero(np.arange(params.num_items) != i)
    return _top_k(sims, candidates, k)


def co_purchased(params: ModelParams, i: int, k: int = 5) -> list:
    """Items ranked by ``w_i . v_j``, the embedding of ``i`` against each context vector."""
    if not 0 <= i < params.num_items:
        raise IndexError(f"item index {i} out of range")
    act = params.activation
    w = activate(params.W[i].astype(np.float64), act)
    scores = activate(params.V.astype(np.float64), act) @ w
    candidates = np.flatnonzero(np.arange(params.num_items) != i)
    return _top_k(scores, candidates, k)


def to_json_rows(results: Sequence[ScoredItem], item_ids: Optional[Sequence[str]] = None) -> list:
    """``[{item_raw_id, score}]`` with raw ids restored when a map is given."""
    return [
        {"item_raw_id": item_ids[r.item] if item_ids is not None else str(r.item), "score": r.score}
        for r in results
    ]
