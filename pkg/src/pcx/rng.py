"""Named, reproducible random sub-streams derived from one integer seed."""

import zlib

import numpy as np


def substream_seed(seed: int, name: str, *index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode()), *map(int, index)])


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Generator for stream ``name`` (e.g. ``"kmeans"``, ``"masks"``) and optional indices."""
    return np.random.default_rng(substream_seed(seed, name, *index))


def derive_int(seed: int, name: str, *index: int) -> int:
    return int(substream_seed(seed, name, *index).generate_state(1)[0])
