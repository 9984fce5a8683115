"""Counter-based random streams keyed by (master seed, purpose, task index).

Each task gets its own Philox generator whose key is derived from the master
seed and the task coordinates, so results do not depend on which worker runs
which task or in what order.
"""

import numpy as np

BOOTSTRAP = 1
MONTE_CARLO = 2
SIMULATION = 3
STUDY = 4


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for task ``key`` under master ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
