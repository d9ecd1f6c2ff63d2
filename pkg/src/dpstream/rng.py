"""Hierarchical seed derivation.

Every randomized step draws from a generator derived from
``(master seed, run, time step, purpose)`` so that runs are reproducible and
independent tasks never share generator state.
"""
import zlib

import numpy as np


def purpose_code(purpose):
    return zlib.crc32(purpose.encode("utf-8"))


def derive_rng(seed, *path):
    """Return a fresh ``numpy.random.Generator`` for ``seed`` and a key path.

    Path elements are non-negative ints or strings; strings are mapped to a
    stable 32-bit code.
    """
    key = tuple(purpose_code(p) if isinstance(p, str) else int(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))


def derive_seed(seed, *path):
    """Integer seed derived like :func:`derive_rng`, for APIs that take ints."""
    key = tuple(purpose_code(p) if isinstance(p, str) else int(p) for p in path)
    return int(np.random.SeedSequence(entropy=int(seed), spawn_key=key).generate_state(1, np.uint64)[0] >> 1)
