"""Named, independent random streams split from one master seed.

Every stream is a Philox (counter-based) generator keyed by the master seed
and a fixed ``(stream id, index)`` spawn key, so streams never overlap and
a run is reproducible from the master seed alone.
"""

from __future__ import annotations

import numpy as np

STREAMS = {
    "arrivals": 1,
    "lbs": 2,
    "theta": 3,
    "service": 4,
    "residual": 5,
    "noise": 6,
    "ties": 7,
    "replicate": 8,
}

MAX_SEED = 2**64 - 1


def check_seed(seed) -> int:
    if isinstance(seed, bool) or int(seed) != seed or not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be an integer in [0, 2**64): {seed!r}")
    return int(seed)


def stream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(STREAMS[name], index))
    return np.random.Generator(np.random.Philox(ss))


def replicate_seed(master: int, r: int, family: int = 0) -> int:
    """Seed of replication ``r`` under master seed ``master``.

    ``family`` separates replication sets that must be independent within
    one experiment (queue runs versus diffusion runs, say).
    """
    ss = np.random.SeedSequence(check_seed(master), spawn_key=(STREAMS["replicate"], family, r))
    return int(ss.generate_state(1, np.uint64)[0])
