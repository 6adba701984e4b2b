"""Top-N ranking metrics over the test split, overall and by user activity."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .data import DatasetSplit, SparseClickMatrix, build_matrix, merge
from .model import ModelParams
from .query import Scorer

SEGMENTS = ("Low", "Medium", "High")
DEFAULT_N = (5, 10, 20)


def recall_at_n(ranked: Sequence[int], truth, n: int) -> float:
    """Hits in the top ``n`` divided by ``min(n, |truth|)``."""
    truth = set(truth)
    if n < 1 or not truth:
        raise ValueError("need n >= 1 and a non-empty truth set")
    hits = sum(1 for j in list(ranked)[:n] if j in truth)
    return hits / min(n, len(truth))


def ndcg_at_n(ranked: Sequence[int], truth, n: int) -> float:
    """Binary-gain nDCG with a ``log2(rank + 1)`` discount."""
    truth = set(truth)
    if n < 1 or not truth:
        raise ValueError("need n >= 1 and a non-empty truth set")
    dcg = sum(1.0 / math.log2(k + 2) for k, j in enumerate(list(ranked)[:n]) if j in truth)
    idcg = sum(1.0 / math.log2(k + 2) for k in range(min(n, len(truth))))
    return dcg / idcg


def segment_of(clicks: int) -> str:
    if clicks < 10:
        return "Low"
    if clicks <= 20:
        return "Medium"
    return "High"


def segment_users(train_matrix: SparseClickMatrix) -> Dict[int, str]:
    """Activity bucket of every user from their training click count."""
    return {u: segment_of(int(k)) for u, k in enumerate(train_matrix.row_lengths())}


def metric_names(n_list: Iterable[int]) -> List[str]:
    n_list = list(n_list)
    return [f"recall@{n}" for n in n_list] + [f"ndcg@{n}" for n in n_list]


@dataclass
class EvalReport:
    metrics: Dict[str, float]
    num_users: int
    segments: Dict[str, dict] = field(default_factory=dict)
    per_user: Optional[list] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"metrics": self.metrics, "num_users": self.num_users, "segments": self.segments}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)

    def write_per_user_csv(self, path, user_ids: Optional[Sequence[str]] = None) -> None:
        if not self.per_user:
            raise ValueError("report holds no per-user rows")
        names = [k for k in self.per_user[0] if k not in ("user", "segment", "train_clicks")]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["user", "segment", "train_clicks", *names])
            for row in self.per_user:
                user = user_ids[row["user"]] if user_ids is not None else row["user"]
                writer.writerow([user, row["segment"], row["train_clicks"], *(row[k] for k in names)])


def _user_metrics(scorer, train, seen, test, users, n_list, max_n):
    rows = []
    for u in users:
        truth = test.row(u)
        ranked = [r.item for r in scorer.rank(int(u), train.row(u), seen.row(u), max_n)]
        row = {"user": int(u), "segment": segment_of(train.row(u).size), "train_clicks": int(train.row(u).size)}
        for n in n_list:
            row[f"recall@{n}"] = recall_at_n(ranked, truth, n)
        for n in n_list:
            row[f"ndcg@{n}"] = ndcg_at_n(ranked, truth, n)
        rows.append(row)
    return rows


def _mean(rows, names):
    if not rows:
        return {k: 0.0 for k in names}
    return {k: float(np.mean([r[k] for r in rows])) for k in names}


def evaluate(
    params: ModelParams,
    split: DatasetSplit,
    n_list: Sequence[int] = DEFAULT_N,
    variant: str = "npe",
    threads: int = 1,
    keep_per_user: bool = False,
) -> EvalReport:
    """Macro-averaged Recall@n and nDCG@n over users with test clicks.

    Each user is scored with their training clicks as context; training and
    validation clicks are removed from the candidate list.
    """
    if params.num_users != split.num_users or params.num_items != split.num_items:
        raise ValueError(
            f"model is {params.num_users}x{params.num_items} but split is "
            f"{split.num_users}x{split.num_items}"
        )
    n_list = sorted(set(int(n) for n in n_list))
    if not n_list or n_list[0] < 1:
        raise ValueError("n_list must hold positive integers")
    train = build_matrix(split.train)
    seen = build_matrix(merge(split.train, split.validation))
    test = build_matrix(split.test)
    users = np.flatnonzero(test.row_lengths() > 0)
    scorer = Scorer(params, variant)
    max_n = n_list[-1]

    if threads > 1 and users.size > 1:
        chunks = np.array_split(users, threads)
        with ThreadPoolExecutor(threads) as pool:
            parts = pool.map(lambda c: _user_metrics(scorer, train, seen, test, c, n_list, max_n), chunks)
            rows = [r for part in parts for r in part]
    else:
        rows = _user_metrics(scorer, train, seen, test, users, n_list, max_n)

    names = metric_names(n_list)
    segments = {}
    for seg in SEGMENTS:
        seg_rows = [r for r in rows if r["segment"] == seg]
        segments[seg] = {"users": len(seg_rows), "metrics": _mean(seg_rows, names)}
    return EvalReport(_mean(rows, names), len(rows), segments, rows if keep_per_user else None)
