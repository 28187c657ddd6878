"""Seeded RNG substreams.

Every random decision in the package flows from one top-level integer seed.
Named substreams keep e.g. weight initialization independent of minibatch
shuffling, so changing the epoch count never perturbs the initial weights.
"""

import hashlib

import numpy as np


def _label_entropy(label: str) -> int:
    # Stable across processes and platforms (unlike builtin hash()).
    digest = hashlib.blake2s(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(seed: int, *labels) -> np.random.Generator:
    """Generator for the substream named by ``labels`` under ``seed``.

    Labels may be strings or integers; the same (seed, labels) pair always
    yields an identical stream.
    """
    entropy = [int(seed)]
    for label in labels:
        if isinstance(label, str):
            entropy.append(_label_entropy(label))
        else:
            entropy.append(int(label))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def as_generator(seed) -> np.random.Generator:
    """Coerce an int seed or an existing Generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise ValueError("a seed is required for stochastic operations")
    return np.random.default_rng(int(seed))
