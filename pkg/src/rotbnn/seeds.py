"""Root-seed expansion.

Every random stream is ``default_rng([seed, purpose, *extra])``, so each
consumer can be reproduced in isolation from the root seed alone.
"""
import numpy as np

INIT, SHUFFLE, ROTATION, AUGMENT = 0, 1, 2, 3


def purpose_rng(seed: int, purpose: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(purpose), *map(int, extra)])
