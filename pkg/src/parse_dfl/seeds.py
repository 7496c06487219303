"""Deterministic RNG streams derived from a single run seed.

Every random draw in the package comes from a counter-based Philox
generator keyed by (seed, domain, *extra). The domain constants below
document the full split; reproducing a run needs only the one seed.
Streams keyed by (agent, round) make results independent of worker
scheduling.
"""

import numpy as np

DATA = 0        # synthetic dataset generation
PARTITION = 1   # train/test split + Dirichlet shard assignment
INIT = 2        # per-agent parameter init, extra key: (agent_id,)
GOSSIP = 3      # per-round gossip resampling, extra key: (round, graph_index)
SHUFFLE = 4     # per-epoch batch order, extra key: (agent_id, round)


def stream(seed, domain, *extra):
    """Return a fresh Generator for the given (seed, domain, *extra) key."""
    key = (int(seed), int(domain)) + tuple(int(x) for x in extra)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
