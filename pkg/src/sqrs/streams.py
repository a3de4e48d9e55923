"""Deterministic, keyed random streams.

Every stochastic step in the simulator draws from a counter-based Philox
generator keyed by (seed, purpose, index...). Streams with distinct keys are
independent, and a given key always reproduces the same draw sequence no
matter how the consuming code batches its requests.
"""

import numpy as np

# Purpose tags for top-level stream derivation.
STREAM_TOMOGRAPHY = 1
STREAM_SENSING = 2

# Uniform draws consumed per raw sensing attempt, in order:
# basis choice, Alice outcome, Bob outcome, detection.
DRAWS_PER_ATTEMPT = 4


def substream(seed: int, *path: int) -> np.random.Generator:
    """Generator for the stream keyed by (seed, *path)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
