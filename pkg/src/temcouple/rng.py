"""Counter-based random number streams.

Every stochastic routine in the library draws from a Philox generator keyed
by ``(seed, *stream_key)``.  Distinct keys give statistically independent
streams, so per-path / per-task streams can be created on demand and results
never depend on scheduling or worker count.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return the generator for stream ``key`` of the root ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def path_streams(seed: int, n_paths: int, *prefix: int) -> list[np.random.Generator]:
    """One independent stream per path, keyed by ``(seed, *prefix, path_index)``."""
    return [stream(seed, *prefix, i) for i in range(n_paths)]
