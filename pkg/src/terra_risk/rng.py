"""Keyed, order-independent random streams.

Every random quantity in the package is drawn from a Philox (counter-based)
generator whose key is derived from a root seed plus a tuple of integers
naming the consumer.  Two calls with the same key always see the same
numbers, regardless of what else was drawn before.
"""

import numpy as np

# stream tags, kept stable so on-disk results stay reproducible
HEIGHTMAP = 1
CLASSMAP = 2
DATASET = 3
TRAINING = 4
CLASSIFIER = 5
RISK = 6
EXECUTION = 7

_MASK63 = (1 << 63) - 1


def stream(seed, *key):
    """Return a Philox generator keyed by ``(seed, *key)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, key)])))


def derive_seed(seed, *key):
    """Derive a 63-bit integer seed for a child object."""
    state = np.random.SeedSequence([int(seed), *map(int, key)]).generate_state(1, np.uint64)
    return int(state[0]) & _MASK63
