"""Named random sub-streams derived from one experiment seed."""

import zlib

import numpy as np


def substream(seed: int, name: str, *ids: int) -> np.random.SeedSequence:
    """Independent stream for component ``name`` (e.g. ``"env"``, ``"init"``, ``"actor"``, ``"pbt"``)."""
    return np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(name.encode()), *map(int, ids)))
