"""
Seed expansion into independent per-purpose random streams.

One run seed is expanded with a counter-based generator (Philox) keyed by
(seed, purpose, *counters), so a partial re-run that asks for the same key gets
the same numbers regardless of what was drawn before.
"""
import numpy as np

PURPOSES = {
    'init': 1,
    'walks': 2,
    'negatives': 3,
    'shuffle': 4,
    'partition': 5,
    'split': 6,
    'decoder': 7,
    'classifier': 8,
    'generator': 9,
    'labels': 10,
}


class RandomStreams:
    """Hands out reproducible numpy Generators for named purposes"""

    def __init__(self, seed=0):
        if seed is None:
            seed = 0
        if int(seed) < 0:
            raise ValueError(f"Seed must be nonnegative, got {seed}")
        self.seed = int(seed)

    def get(self, purpose, *counters):
        """
        Return a fresh Generator for purpose and optional integer counters
        Args:
            purpose: one of PURPOSES
            counters: e.g. (iteration, direction, level)
        """
        if purpose not in PURPOSES:
            raise ValueError(f"Unknown random stream purpose: {purpose}")
        entropy = [self.seed, PURPOSES[purpose]] + [int(c) for c in counters]
        seed_seq = np.random.SeedSequence(entropy)
        return np.random.Generator(np.random.Philox(seed_seq))


def as_generator(seed_or_rng, purpose='init'):
    """Accept an int seed, a RandomStreams or a Generator and return a Generator"""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    if isinstance(seed_or_rng, RandomStreams):
        return seed_or_rng.get(purpose)
    return RandomStreams(seed_or_rng).get(purpose)
