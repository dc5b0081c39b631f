"""Seed discipline.

Every random stream in a run is derived from the root seed plus a tuple of
labels, e.g. ``stream(seed, "simulate", 3)``. Derivation uses numpy's
``SeedSequence`` with the labels as ``spawn_key`` and the PCG64 bit
generator, both of which are specified algorithms with platform-independent
output. Changing how one stage consumes randomness never shifts another.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_key(label: int | str) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"integer stream labels must be non-negative, got {label}")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def seed_sequence(root_seed: int, *labels: int | str) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(root_seed), spawn_key=tuple(_label_key(x) for x in labels))


def stream(root_seed: int, *labels: int | str) -> np.random.Generator:
    """Independent PCG64 generator for ``(root_seed, *labels)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(root_seed, *labels)))


def derive_seed(root_seed: int, *labels: int | str) -> int:
    """A 63-bit integer seed for components that take a plain int."""
    state = seed_sequence(root_seed, *labels).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])
