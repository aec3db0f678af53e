"""Counter-based sub-seeds so every job's random stream is fixed up front."""

import numpy as np


def sub_seed(seed, *keys) -> int:
    """Deterministic 32-bit seed for the job identified by ``keys``."""
    entropy = [int(seed)] + [int(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def rng_for(seed, *keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [int(k) for k in keys]))
