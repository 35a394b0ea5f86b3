"""Sub-seed derivation.

Every random stream is ``numpy.random.Generator(PCG64(SeedSequence(seed,
spawn_key=(crc32(stage), *item_ids))))``, so a stage or a single work item
can be rerun in isolation and results do not depend on scheduling order.
"""

from __future__ import annotations

import zlib

import numpy as np


def stage_key(stage: str) -> int:
    return zlib.crc32(stage.encode("utf-8"))


def seed_sequence(seed: int, stage: str, *items: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(stage_key(stage), *(int(i) for i in items)))


def substream(seed: int, stage: str, *items: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, stage, *items)))
