"""
Deterministic random streams.

Every stream is a numpy ``Generator`` over the PCG64 bit generator, seeded by a
``SeedSequence`` whose entropy is the 64-bit master seed and whose spawn key is
the tuple of integer keys naming the stream (e.g. realisation, round, row).
The mapping seed -> stream is therefore stable across runs and platforms and
independent of the order in which streams are requested.
"""

import numpy as np

# Stream purposes, used as the first spawn-key element
STREAM_INITIAL = 0
STREAM_REFINE_SPLIT = 1
STREAM_REFINE_ROW = 2
STREAM_DISCRIMINATOR = 3
STREAM_REALISATION = 4
STREAM_REPEAT = 5
STREAM_SHUFFLE = 6
STREAM_PAIR = 7

MAX_SEED = 2 ** 64 - 1


def _check_seed(seed):
    if not isinstance(seed, (int, np.integer)) or not 0 <= int(seed) <= MAX_SEED:
        raise ValueError(f"Seed must be an unsigned 64-bit integer, got {seed!r}")
    return int(seed)


def seed_sequence(seed, *keys):
    """Return the ``SeedSequence`` naming stream ``keys`` under ``seed``."""
    seed = _check_seed(seed)
    for key in keys:
        if int(key) < 0:
            raise ValueError(f"Stream keys must be non-negative, got {key!r}")
    return np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in keys))


def derive_rng(seed, *keys):
    """Independent generator for the stream named by ``keys``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


def derive_seed(seed, *keys):
    """A fresh 64-bit seed for the stream named by ``keys``."""
    state = seed_sequence(seed, *keys).generate_state(1, dtype=np.uint64)
    return int(state[0])


def stream_key(name):
    """Non-negative integer key for a named stream, such as an airport and delay kind."""
    return int.from_bytes(str(name).encode('utf-8'), 'big')
