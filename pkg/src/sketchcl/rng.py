"""Reproducible random streams.

Every random quantity in the package is drawn from numpy's ``Philox``
bit generator (Philox4x64 with 10 rounds, a counter-based 64-bit generator)
keyed through ``numpy.random.SeedSequence`` with entropy ``[seed, *keys]``.
Normals use numpy's ziggurat sampler, permutations use numpy's
Fisher-Yates shuffle. Given the same numpy version these streams are
bit-identical across platforms.
"""
import numpy as np

# keys used to split the stream of one experiment seed
SKETCH_STREAM = 1
PERMUTATION_STREAM = 2
DATA_STREAM = 3
INIT_STREAM = 4
FEATURE_STREAM = 5


def make_rng(seed, *keys):
    """Return a Philox-backed ``Generator`` for ``seed`` and extra integer keys."""
    if isinstance(seed, np.random.Generator):
        return seed
    entropy = [int(seed)] + [int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed, *keys):
    """Collapse ``(seed, *keys)`` into a single 63-bit integer seed."""
    entropy = [int(seed)] + [int(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0] >> np.uint64(1))
