"""Derivation of independent RNG streams from a single root seed.

Every source of randomness in a run is a named substream of the root
seed, so results never depend on execution order or worker count.
Stream layout:

    init            model initialization
    sample, r       client sampling for round r
    client, r, i    client i's batch shuffles in round r (one permutation
                    drawn per local epoch, in epoch order, nothing else)
    data            synthetic dataset noise
    partition       the partitioner's draws
    split, i        client i's train/eval split
"""

import numpy as np

_MASK64 = (1 << 64) - 1

_TAGS = {
    "init": 0,
    "sample": 1,
    "client": 2,
    "data": 3,
    "partition": 4,
    "split": 5,
}


def seed_sequence(seed: int, tag: str, *indices: int) -> np.random.SeedSequence:
    if tag not in _TAGS:
        raise KeyError(f"unknown rng stream tag {tag!r}")
    return np.random.SeedSequence([seed & _MASK64, _TAGS[tag], *indices])


def stream(seed: int, tag: str, *indices: int) -> np.random.Generator:
    """Generator for the named substream; same arguments, same stream."""
    return np.random.default_rng(seed_sequence(seed, tag, *indices))


def substream_seed(seed: int, tag: str, *indices: int) -> int:
    """A plain integer seed derived from the named substream."""
    return int(seed_sequence(seed, tag, *indices).generate_state(1, np.uint64)[0])
