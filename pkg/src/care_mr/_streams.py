"""Keyed random substreams.

All randomness in the package is drawn from generators keyed by a user seed
plus a tuple of integers (purpose tag, replicate index, ...). Two calls with
the same key always produce the same stream, whatever order or thread they
run in.
"""

import numpy as np

# purpose tags; never renumber, outputs depend on them
SELECTION = 0
BOOTSTRAP = 1
RESTARTS = 2
DATASET = 3
METHOD = 4


def substream(seed, *key):
    """Return a ``numpy.random.Generator`` for ``(seed, *key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def derive_seed(seed, *key):
    """Derive a child u64 seed, for handing to APIs that take a seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
