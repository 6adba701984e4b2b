"""
Looking up items
================

Once trained, the item matrices answer two different questions.  Cosine
similarity between item embeddings finds items that play the same role;
the inner product of one item's embedding with other items' context
vectors finds items that tend to be clicked alongside it.
"""

import numpy as np

from npe import TrainConfig, split, train
from npe.query import co_purchased, recommend_top_n, similar_items
from npe.synthetic import make_block_dataset
from npe.data import build_matrix

data = make_block_dataset(200, 200, num_blocks=4, seed=0)
parts = split(data, (0.8, 0.1, 0.1), seed=0)
params, _ = train(parts, TrainConfig(dim=16, seed=0))
blocks = np.arange(200) * 4 // 200

item = 3
found = False
while not found:
    try:
        sims = similar_items(params, item, k=5)
        found = True
    except ValueError:
        # this embedding died under the ReLU; try the next item
        item += 1

buys = co_purchased(params, item, k=5)
print(f"item {data.item_ids[item]} (block {blocks[item]})")
print("  similar:     ", [(data.item_ids[r.item], round(r.score, 3)) for r in sims])
print("  co-purchased:", [(data.item_ids[r.item], round(r.score, 3)) for r in buys])


def purity(results):
    return np.mean([blocks[r.item] == blocks[item] for r in results])


print(f"  share from the same block: similar {purity(sims):.0%}, co-purchased {purity(buys):.0%}")

# Personalized recommendations use everything the user already clicked
train_rows = build_matrix(parts.train)
user = 0
recs = recommend_top_n(params, user, train_rows.row(user), n=5)
print(f"user {data.user_ids[user]} (block {user * 4 // 200}) gets",
      [f"{data.item_ids[r.item]}/b{blocks[r.item]}" for r in recs])
