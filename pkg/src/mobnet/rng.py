"""Splittable random streams.

All randomness in the package flows through `stream`, which derives an
independent counter-based Philox generator from a root seed and a tuple of
small integers naming the consumer (replication chunk, primitive class, ...).
Streams derived from the same (seed, path) are identical regardless of how
many other streams exist or in which order they are created, which is what
makes replication-parallel runs reproducible.
"""

from __future__ import annotations

import numpy as np

# Primitive-class identifiers, so call sites don't sprinkle magic numbers.
ARRIVALS = 0
DEPARTURES = 1
MOVEMENTS = 2
SELECTION = 3
REQUIREMENTS = 4
NOISE = 5
CLOCK = 6
CATEGORY = 7


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return the generator for `path` under the root `seed`."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def chunk_sizes(total: int, n_chunks: int) -> list[int]:
    """Split `total` replications into at most `n_chunks` near-equal chunks.

    The split depends only on (total, n_chunks), never on thread count.
    """
    n_chunks = max(1, min(n_chunks, total)) if total > 0 else 1
    base, extra = divmod(total, n_chunks)
    return [base + (1 if i < extra else 0) for i in range(n_chunks)]
