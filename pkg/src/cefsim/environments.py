"""Random cuboid obstacle scenarios for the D1-D4 density classes."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import GridSpec, VoxelSet
from .seeding import substream

MIN_OBSTACLES, MAX_OBSTACLES = 3, 12
MIN_EDGE, MAX_EDGE = 5.0, 20.0
TOLERANCE = 0.2
PILOT_SIZE = 200
MAX_ATTEMPTS = 20
BATCH_FORMAT = "cefsim.scenarios/1"


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class DensityClass:
    label: str

    def __post_init__(self):
        if self.label not in ("D1", "D2", "D3", "D4"):
            raise ValueError(f"unknown density class {self.label!r}")

    @property
    def level(self) -> int:
        return int(self.label[1])

    @property
    def target_occupancy(self) -> float:
        return 0.01 * self.level

    @classmethod
    def parse(cls, value) -> "DensityClass":
        return value if isinstance(value, cls) else cls(str(value).upper())


@dataclass(frozen=True)
class Cuboid:
    lo: tuple[float, float, float]
    size: tuple[float, float, float]

    @property
    def hi(self) -> tuple[float, float, float]:
        return tuple(a + s for a, s in zip(self.lo, self.size))

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))


@dataclass(frozen=True)
class Scenario:
    id: int
    obstacles: tuple[Cuboid, ...]
    grid: GridSpec

    @cached_property
    def occupancy(self) -> VoxelSet:
        return rasterize_obstacles(self.obstacles, self.grid)


def rasterize_obstacles(cuboids: Sequence[Cuboid], grid: GridSpec) -> VoxelSet:
    """Voxels whose centre lies inside (or on the boundary of) any cuboid."""
    centres = (np.arange(grid.resolution) + 0.5) * grid.voxel_size
    mask = np.zeros(grid.shape, dtype=bool)
    for c in cuboids:
        sl = []
        for lo, hi in zip(c.lo, c.hi):
            inside = np.flatnonzero((centres >= lo) & (centres <= hi))
            sl.append(slice(inside[0], inside[-1] + 1) if inside.size else slice(0, 0))
        mask[tuple(sl)] = True
    return VoxelSet.from_mask(grid, mask)


def _draw(rng: np.random.Generator, count: int, extent: float) -> tuple[Cuboid, ...]:
    size = rng.uniform(MIN_EDGE, MAX_EDGE, size=(count, 3))
    lo = rng.random((count, 3)) * (extent - size)
    return tuple(
        Cuboid(tuple(float(v) for v in a), tuple(float(v) for v in s)) for a, s in zip(lo, size)
    )


def _occupancy(cuboids, grid) -> float:
    return len(rasterize_obstacles(cuboids, grid)) / grid.n_cells


@dataclass(frozen=True)
class Calibration:
    count_range: tuple[int, int]
    predicted: float
    pilot: dict[int, float]

    def to_dict(self) -> dict:
        return {
            "count_range": list(self.count_range),
            "predicted_occupancy": self.predicted,
            "pilot_occupancy": {str(k): v for k, v in self.pilot.items()},
        }


def calibrate(dclass: DensityClass, grid: GridSpec, seed: int, pilot_size: int = PILOT_SIZE) -> Calibration:
    """Fit the obstacle-count sub-range whose pilot occupancy best matches the class.

    Edge lengths and the overall [3, 12] count range are fixed, so density is
    steered only by narrowing the count range. Raises when no sub-range lands
    within the tolerance, which happens when the environment is too large or
    too small for the class.
    """
    if grid.physical_extent < MAX_EDGE:
        raise ScenarioError(f"environment of {grid.physical_extent} cm cannot hold a {MAX_EDGE} cm obstacle")
    pilot = {}
    for k in range(MIN_OBSTACLES, MAX_OBSTACLES + 1):
        rng = substream(seed, "env-calibration", k, grid.resolution)
        pilot[k] = float(np.mean([_occupancy(_draw(rng, k, grid.physical_extent), grid) for _ in range(pilot_size)]))
    target = dclass.target_occupancy
    best = None
    for a in range(MIN_OBSTACLES, MAX_OBSTACLES + 1):
        for b in range(a, MAX_OBSTACLES + 1):
            pred = float(np.mean([pilot[k] for k in range(a, b + 1)]))
            key = (round(abs(pred - target) / target, 3), -(b - a), a)
            if best is None or key < best[0]:
                best = (key, (a, b), pred)
    (err, _, _), rng_, pred = best
    if err > TOLERANCE / 2:
        raise ScenarioError(
            f"{dclass.label} target occupancy {target:.2%} unreachable with {MIN_OBSTACLES}-{MAX_OBSTACLES} "
            f"obstacles of {MIN_EDGE:g}-{MAX_EDGE:g} cm in a {grid.physical_extent:g} cm environment "
            f"(closest: {pred:.2%}); adjust the environment extent"
        )
    return Calibration(rng_, pred, pilot)


def scenario(dclass: DensityClass, index: int, grid: GridSpec, seed: int, count_range, attempt: int = 0) -> Scenario:
    rng = substream(seed, "scenario", dclass.level, index, attempt)
    k = int(rng.integers(count_range[0], count_range[1] + 1))
    return Scenario(index, _draw(rng, k, grid.physical_extent), grid)


@dataclass
class ScenarioBatch:
    dclass: DensityClass
    grid: GridSpec
    seed: int
    scenarios: list[Scenario]
    calibration: Calibration
    attempt: int

    def __len__(self) -> int:
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)

    def __getitem__(self, i):
        return self.scenarios[i]

    def mean_occupancy(self) -> float:
        return float(np.mean([len(s.occupancy) for s in self.scenarios])) / self.grid.n_cells

    def obstacle_matrix(self) -> np.ndarray:
        out = np.zeros((len(self.scenarios), self.grid.n_cells), dtype=bool)
        for i, s in enumerate(self.scenarios):
            out[i, s.occupancy.indices] = True
        return out

    def to_json(self) -> str:
        doc = {
            "format": BATCH_FORMAT,
            "class": self.dclass.label,
            "seed": self.seed,
            "grid": self.grid.to_dict(),
            "attempt": self.attempt,
            "calibration": self.calibration.to_dict(),
            "mean_occupancy": self.mean_occupancy(),
            "scenarios": [
                {"id": s.id, "obstacles": [[list(c.lo), list(c.size)] for c in s.obstacles]} for s in self.scenarios
            ],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path) -> "ScenarioBatch":
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != BATCH_FORMAT:
            raise ScenarioError(f"{path}: not a scenario batch")
        grid = GridSpec.from_dict(doc["grid"])
        cal = doc["calibration"]
        calibration = Calibration(
            tuple(cal["count_range"]),
            cal["predicted_occupancy"],
            {int(k): v for k, v in cal["pilot_occupancy"].items()},
        )
        scen = [
            Scenario(s["id"], tuple(Cuboid(tuple(lo), tuple(sz)) for lo, sz in s["obstacles"]), grid)
            for s in doc["scenarios"]
        ]
        return cls(DensityClass(doc["class"]), grid, doc["seed"], scen, calibration, doc["attempt"])


def generate_scenarios(dclass, count: int, grid: GridSpec, seed: int, calibration: Calibration | None = None) -> ScenarioBatch:
    """Seeded scenario batch whose mean occupancy is within 20% of the class target.

    If a batch misses the band, the obstacle counts are redrawn (new attempt
    index) up to a fixed number of times before giving up.
    """
    dclass = DensityClass.parse(dclass)
    if count < 1:
        raise ValueError("count must be >= 1")
    cal = calibration or calibrate(dclass, grid, seed)
    target = dclass.target_occupancy
    for attempt in range(MAX_ATTEMPTS):
        batch = ScenarioBatch(
            dclass, grid, seed, [scenario(dclass, i, grid, seed, cal.count_range, attempt) for i in range(count)], cal, attempt
        )
        if count < 50 or abs(batch.mean_occupancy() - target) <= TOLERANCE * target:
            return batch
    raise ScenarioError(
        f"{dclass.label}: batch mean occupancy stayed outside ±{TOLERANCE:.0%} of {target:.2%} "
        f"after {MAX_ATTEMPTS} attempts"
    )
