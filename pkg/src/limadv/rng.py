"""Counter-based random streams.

Every block of samples gets its own Philox generator keyed by
``(seed, block index)``.  Work can therefore be split across threads in any
way without changing a single drawn number, as long as block boundaries are
fixed.
"""

from __future__ import annotations

import numpy as np

BLOCK = 1 << 16


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, key)])))


def normal_blocks(seed: int, n_samples: int, dim: int, block: int = BLOCK, tag: int = 0):
    """Yield standard normal arrays of shape (<=block, dim) covering n_samples rows."""
    start = 0
    b = 0
    while start < n_samples:
        size = min(block, n_samples - start)
        yield stream(seed, tag, b).standard_normal((size, dim))
        start += size
        b += 1
