"""Deterministic fan-out of one root seed into independent component streams."""

import numpy as np

STREAMS = ("split", "init", "sampler", "dropout", "validation")


def derive_seeds(root: int) -> dict:
    """Map each stream name to its own ``SeedSequence`` child of ``root``."""
    children = np.random.SeedSequence(root).spawn(len(STREAMS))
    return dict(zip(STREAMS, children))


def split_seed(root: int) -> int:
    """Integer seed for the data split, recorded alongside split manifests."""
    return int(derive_seeds(root)["split"].generate_state(1)[0])
