"""Seed handling shared by every module.

All randomness goes through numpy's PCG64 bit generator, seeded through
``SeedSequence`` so that integer seeds and tuples of integers (used for
per-task substreams) give platform-independent streams.
"""
import numpy as np


def _flatten(seed):
    for s in seed:
        if isinstance(s, (tuple, list)):
            yield from _flatten(s)
        else:
            yield int(s)


def as_rng(seed):
    """Return a ``Generator`` for an int, a (nested) tuple of ints, or an existing generator.

    Nested tuples are flattened, so ``((s, 3), 0)`` and ``(s, 3, 0)`` name the
    same substream.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (tuple, list)):
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(_flatten(seed)))))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
