"""
Random stream derivation.

Every random number in BranchLab comes from a Philox (counter-based) bit
generator keyed by the master seed plus a tuple of integer keys. The first key
names the purpose of the stream, the remaining keys name indices such as the
population count, replica, restart or iteration. Streams therefore never
depend on which worker thread runs a job or in which order jobs finish.
"""

from typing import Tuple

import numpy as np


# Stream purposes (first spawn key)
STREAM_BRANCHING = 1
STREAM_LIFTED = 2
STREAM_VALUE = 3
STREAM_STUDY = 4
STREAM_REFERENCE = 5
STREAM_CHECK = 6
STREAM_ASSUMPTIONS = 7
STREAM_SIMULATE = 8

SEED_MASK = (1 << 63) - 1


def _spawn_key(keys: Tuple[int, ...]) -> Tuple[int, ...]:
    key = tuple(int(k) for k in keys)
    if any(k < 0 for k in key):
        raise ValueError(f"Stream keys must be non-negative, got {key}")
    return key


def derive_generator(seed: int, *keys: int) -> np.random.Generator:
    """
    Build the generator for one stream.

    Args:
        seed: Master seed (non-negative, up to 64 bits)
        *keys: Stream purpose followed by indices

    Returns:
        numpy Generator backed by Philox
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=_spawn_key(keys))
    return np.random.Generator(np.random.Philox(sequence))


def derive_seed(seed: int, *keys: int) -> int:
    """Derive a child master seed (63 bits) for a nested run."""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=_spawn_key(keys))
    state = sequence.generate_state(1, dtype=np.uint64)
    return int(state[0]) & SEED_MASK
