"""Counter-based random number streams for reproducible simulation.

Every stochastic routine in the package derives its generators through
:func:`stream`, keyed by a user seed plus a small tuple of context indices
(context tag, gate index, ...).  Streams keyed differently are statistically
independent, and results do not depend on the order in which streams are
consumed, so parallel and serial execution of the keyed loops agree exactly.
"""

from __future__ import annotations

import numpy as np


def stream(seed, *key):
    """Philox generator for the given seed and context key.

    ``seed`` must be a non-negative integer; key components must be
    non-negative integers as well (gate counts, pool indices, tags).
    """
    if seed is None or int(seed) < 0:
        raise ValueError("seed must be a non-negative integer")
    spawn_key = tuple(int(k) for k in key)
    if any(k < 0 for k in spawn_key):
        raise ValueError("stream key components must be non-negative")
    seq = np.random.SeedSequence(int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(seq))
