"""Seeded random streams.

Every random draw in darkproxy comes from :func:`stream`.  A stream is identified by the
master seed plus a tuple of labels (``"row"``, ``"pixel"``, an ISO, a step index ...), so
components never share state and any one of them can be regenerated in isolation.
"""

import zlib

import numpy as np

Label = str | int


def _label_key(label: Label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


def seed_sequence(seed: int, *labels: Label) -> np.random.SeedSequence:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = tuple(_label_key(label) for label in labels)
    return np.random.SeedSequence(entropy=int(seed), spawn_key=key)


def stream(seed: int, *labels: Label) -> np.random.Generator:
    """Return an independent generator for ``(seed, *labels)``"""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *labels)))


def derive_seed(seed: int, *labels: Label) -> int:
    """Derive a 63-bit child seed, for APIs that take a plain integer seed"""
    state = seed_sequence(seed, *labels).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
