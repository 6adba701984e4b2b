"""
Who benefits from the context term
==================================

The full model scores an item against both the user's own vector and the
sum of context vectors of everything the user clicked.  The "mf" variant
drops the context term and "embedding" drops the user vector.  Breaking
Recall@20 down by how many training clicks a user has shows where each
term earns its keep.
"""

from npe import TrainConfig, evaluate, split, train
from npe.synthetic import make_block_dataset

data = make_block_dataset(200, 200, num_blocks=4, min_clicks=3, max_clicks=60, seed=4)
parts = split(data, (0.7, 0.1, 0.2), seed=0)

rows = {}
for variant in ("npe", "mf", "embedding"):
    params, _ = train(parts, TrainConfig(dim=16, variant=variant, seed=0))
    rows[variant] = evaluate(params, parts, [20], variant=variant)

segments = ("Low", "Medium", "High")
counts = rows["npe"].segments
print("segment sizes:", ", ".join(f"{s} {counts[s]['users']}" for s in segments))
print(f"{'variant':10s} {'all':>7s}" + "".join(f"{s:>8s}" for s in segments))
for variant, report in rows.items():
    cells = [report.metrics["recall@20"]] + [report.segments[s]["metrics"]["recall@20"] for s in segments]
    print(f"{variant:10s}" + "".join(f"{c:8.4f}" for c in cells))
