"""
Seeded random streams for replications and Monte Carlo calibration.

Every replication gets its own SeedSequence([master_seed, rep]) root, split
into named child streams so a single rep can be replayed in isolation:

  rep
    ├── theta   (mixture component / truth indicators)
    ├── mu      (effect draws)
    ├── sigma   (standard deviations)
    └── noise   (observation noise)
"""
from dataclasses import dataclass

import numpy as np

STREAM_NAMES = ("theta", "mu", "sigma", "noise")


@dataclass(frozen=True)
class RNGStreams:
    theta: np.random.Generator
    mu: np.random.Generator
    sigma: np.random.Generator
    noise: np.random.Generator


def _generator(seed_seq):
    # Philox is counter based; child sequences give non-overlapping streams
    return np.random.Generator(np.random.Philox(seed_seq))


def streams_from_sequence(root: np.random.SeedSequence) -> RNGStreams:
    children = root.spawn(len(STREAM_NAMES))
    return RNGStreams(**{name: _generator(ss) for name, ss in zip(STREAM_NAMES, children)})


def replicate_sequence(master_seed: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(rep)])


def make_streams(master_seed: int, rep: int) -> RNGStreams:
    """Deterministically create the independent streams for one replication."""
    return streams_from_sequence(replicate_sequence(master_seed, rep))


def calibration_sequence(master_seed) -> np.random.SeedSequence:
    """Root for oracle calibration; disjoint from every replication root."""
    if isinstance(master_seed, np.random.SeedSequence):
        return master_seed
    return np.random.SeedSequence(int(master_seed), spawn_key=(1,))


def seed_ledger_value(master_seed: int, rep: int) -> int:
    """A 64-bit fingerprint of the replication root, recorded in reports."""
    return int(replicate_sequence(master_seed, rep).generate_state(1, np.uint64)[0])
