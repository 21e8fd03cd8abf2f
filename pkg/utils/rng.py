"""Seeded random streams

All randomness in a run flows from one root seed. Each stage draws from its own
stream, keyed by (root seed, label), on numpy's counter-based Philox bit
generator so results are identical across platforms and numpy builds.
"""

import hashlib

import numpy as np


def stream_key(seed: int, label: str) -> int:
    """128-bit Philox key derived from a root seed and a stage label"""
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def derive_rng(seed: int, label: str) -> np.random.Generator:
    """Independent generator for one pipeline stage

    Args:
        seed: root seed of the run
        label: fixed stage label, e.g. "fill_random" or "scene/points"

    Returns:
        np.random.Generator: Philox-backed generator
    """
    return np.random.Generator(np.random.Philox(key=stream_key(seed, label)))
