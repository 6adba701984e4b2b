"""
Training on planted block structure
===================================

Two hundred users and two hundred items are cut into four blocks, and
each user clicks mostly inside their own block.  We split every user's
clicks 70/10/20, train with early stopping on the validation part, and
score the held-out test clicks.
"""

import numpy as np

from npe import TrainConfig, evaluate, split, train
from npe.synthetic import make_block_dataset, random_recall_expectation

data = make_block_dataset(200, 200, num_blocks=4, seed=0)
print(f"{data.num_users} users, {data.num_items} items, {data.num_clicks} clicks "
      f"({100 * data.density:.2f}% dense)")

parts = split(data, (0.7, 0.1, 0.2), seed=1)

# The default batch of 10,000 is sized for real corpora; on ~2,000 training
# clicks it would mean a single Adam step per epoch.  Small batches and a
# larger step let the curve move.
config = TrainConfig(dim=16, batch_size=256, learning_rate=0.01, init_sigma=0.1, seed=0)


def show(epoch, train_loss, val_loss, elapsed):
    if epoch % 5 == 0 or epoch == 1:
        print(f"  epoch {epoch:3d}  train {train_loss:.4f}  validation {val_loss:.4f}")


params, report = train(parts, config, progress=show)
print(f"stopped after {report.stopped_epoch} epochs, best was {report.best_epoch}")

result = evaluate(params, parts)
for name, value in sorted(result.metrics.items()):
    print(f"  {name:10s} {value:.4f}")

# A random ranking of each user's unclicked items gets this much on average
print(f"random Recall@20 {random_recall_expectation(parts, 20):.4f}")

# The learned user vectors should line up with the planted blocks
h = np.maximum(params.H, 0)
blocks = np.arange(200) * 4 // 200
centroids = np.stack([h[blocks == b].mean(axis=0) for b in range(4)])
nearest = np.argmax(h @ centroids.T, axis=1)
print(f"users closest to their own block centroid: {np.mean(nearest == blocks):.0%}")
