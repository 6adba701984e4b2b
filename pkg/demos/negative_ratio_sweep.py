"""
How many negatives per click
============================

Each epoch pairs every click with ``n`` freshly drawn unclicked items.
This sweep trains one model per ``n`` (and then per embedding size) on
the block dataset, holding out 10% of each user's clicks for Recall@20.

Watch the right end of the ``n`` sweep.  Every factor passes through a
ReLU, so scores are never negative and a sampled negative can at best be
pushed to a score of exactly zero.  With many negatives per click on a
small catalogue, most candidates end up tied at zero for each user, and
ranking quality falls back toward random.
"""

import numpy as np

from npe import TrainConfig, evaluate, split, train
from npe.query import Scorer
from npe.data import build_matrix
from npe.synthetic import make_block_dataset, random_recall_expectation

data = make_block_dataset(200, 200, num_blocks=4, seed=0)
parts = split(data, (0.9, 0.0, 0.1), seed=1)
train_rows = build_matrix(parts.train)
print(f"random Recall@20 {random_recall_expectation(parts, 20):.4f}")


def zero_share(params):
    scorer = Scorer(params)
    share = []
    for u in range(parts.num_users):
        s = scorer.scores(u, train_rows.row(u))
        s[train_rows.row(u)] = -np.inf
        share.append(np.mean(np.sort(s)[-20:] == 0))
    return float(np.mean(share))


print(f"{'n':>3s} {'recall@20':>10s} {'top-20 at zero':>15s}")
for n in (1, 2, 4, 8, 16):
    params, _ = train(parts, TrainConfig(dim=16, neg_ratio=n, seed=3))
    recall = evaluate(params, parts, [20]).metrics["recall@20"]
    print(f"{n:3d} {recall:10.4f} {zero_share(params):15.1%}")

print(f"{'D':>3s} {'recall@20':>10s}")
for dim in (8, 16, 32, 64):
    params, _ = train(parts, TrainConfig(dim=dim, neg_ratio=4, seed=3))
    print(f"{dim:3d} {evaluate(params, parts, [20]).metrics['recall@20']:10.4f}")
