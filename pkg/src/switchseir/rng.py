"""Counter-based random streams for reproducible, resumable runs.

Every stochastic stage of a run draws from a Philox generator keyed by
(root seed, stage tag, indices...).  Streams for disjoint key paths are
statistically independent, and a stream's draws depend only on its key,
never on how many draws other streams made.  A run interrupted at an
iteration boundary therefore resumes bit-identically: the streams for
iteration r are a pure function of (seed, r).
"""

from __future__ import annotations

import numpy as np

# Stage tags used as the first element of a substream key path.
TAG_INIT = 0
TAG_CSMC = 1
TAG_REFERENCE = 2
TAG_MH = 3
TAG_SIM = 4


def substream(root_seed: int, *path: int) -> np.random.Generator:
    """Return an independent generator keyed by (root_seed, *path).

    Identical keys always yield identical draw sequences; distinct keys
    yield independent streams.
    """
    if root_seed < 0:
        raise ValueError("root_seed must be nonnegative")
    ss = np.random.SeedSequence(root_seed, spawn_key=tuple(path))
    return np.random.Generator(np.random.Philox(ss))
