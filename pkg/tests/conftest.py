import numpy as np
import pytest

from cefsim.cdm import CdmKind
from cefsim.environments import generate_scenarios
from cefsim.fi import run_phase1
from cefsim.geometry import GridSpec, VoxelSet
from cefsim.robot import ArmSpec, generate_motion_set

DESK_ARM = ArmSpec((14.0, 12.0, 9.0, 7.0), 5.0)


@pytest.fixture(scope="session")
def oracle_grid():
    return GridSpec(8, 2 * DESK_ARM.reach)


@pytest.fixture(scope="session")
def oracle_motions(oracle_grid):
    return generate_motion_set(DESK_ARM, oracle_grid, 16, 32, seed=7)


@pytest.fixture(scope="session")
def oracle_obstacles(oracle_grid):
    return generate_scenarios("D4", 500, oracle_grid, seed=7).obstacle_matrix()


@pytest.fixture(scope="session")
def oracle_phase1(oracle_motions):
    return {kind: run_phase1(oracle_motions, kind) for kind in CdmKind}


def random_blob(grid, rng, boxes=3, noise=0.03):
    m = np.zeros(grid.shape, dtype=bool)
    r = grid.resolution
    for _ in range(boxes):
        lo = rng.integers(0, r - 1, 3)
        hi = lo + rng.integers(1, max(2, r // 2), 3)
        m[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] = True
    m |= rng.random(grid.shape) < noise
    if not m.any():
        m[0, 0, 0] = True
    return VoxelSet.from_mask(grid, m)
