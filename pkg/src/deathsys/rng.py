"""Counter-based random streams.

A stream is addressed by ``(master_seed, purpose, subject, substream)`` and
backed by a Philox generator whose key holds the seed and purpose and whose
counter holds the subject and substream.  Draws for one subject therefore do
not depend on how many other subjects exist or on which worker runs them.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# purposes
SIMULATION = 1
OBSERVATION = 2
CONTRAST = 3

# substreams within a subject
ATTRIBUTES = 0
COUNTING = 1
MONITOR = 2
DIFFUSION_BASE = 16


def stream(master_seed: int, purpose: int, subject: int, substream: int) -> np.random.Generator:
    key = [int(master_seed) & MASK64, int(purpose) & MASK64]
    counter = [0, 0, int(subject) & MASK64, int(substream) & MASK64]
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def replication_seed(seed: int, replication: int, purpose: int = 0) -> int:
    """Independent 64-bit seed for replication ``replication`` of a study."""
    ss = np.random.SeedSequence([int(seed) & MASK64, int(replication), int(purpose)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
