"""Brute-force reference computations and the hand-built reference flip scenes.

Nothing here shares a code path with the fast engine beyond ``encode``,
``flip_bit`` and ``decode``: critical spaces come from plain set differences
of decoded images and SDC-C outcomes from running the CDM model on the
obstacle voxels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cdm import CdmKind, decode, detect_collisions, encode, flip_bit
from .fi import CefReport, ErroneousSweptCache, SdccOutcome, classify_sdcc, sdcc_rows
from .geometry import GridSpec, VoxelSet, exposed_surface_area
from .robot import MotionSet
from .seeding import substream


def decode_diff_cef(swept: VoxelSet, kind, motion_id: int = 0):
    """Yield (critical, erroneous, cef) per bit from decoded set differences."""
    image = encode(kind, swept, motion_id)
    for b in range(image.n_bits):
        err = decode(flip_bit(image, b))
        crit = swept - err
        yield crit, err, exposed_surface_area(crit, err)


@dataclass
class OracleMismatch:
    motion_id: int
    bit: int
    what: str


def check_cef_report(motion_set: MotionSet, report: CefReport, cache: ErroneousSweptCache, limit: int = 20):
    """Compare every bit of a report and cache against the decode-diff oracle."""
    bad: list[OracleMismatch] = []
    n = 0
    for m in motion_set.motions:
        if m.id in report.failed:
            continue
        base = int(report.motion_ptr[m.id])
        count = 0
        for local, (crit, err, cef) in enumerate(decode_diff_cef(m.swept, report.kind, m.id)):
            b = base + local
            n += 1
            count += 1
            if int(report.cef[b]) != cef:
                bad.append(OracleMismatch(m.id, local, f"cef {int(report.cef[b])} != {cef}"))
            elif report.critical(b) != crit:
                bad.append(OracleMismatch(m.id, local, "critical space differs"))
            elif cache.erroneous(report, b) != err:
                bad.append(OracleMismatch(m.id, local, "erroneous swept space differs"))
        if base + count != report.motion_ptr[m.id + 1]:
            bad.append(OracleMismatch(m.id, -1, "bit count differs"))
    return n, bad[:limit] if limit else bad, len(bad)


def simulate_sdcc(swept: VoxelSet, kind, bit: int, obstacles: VoxelSet) -> bool:
    """Full flip -> encode -> detect simulation of one (bit, scenario) pair."""
    image = encode(kind, swept)
    free_hit = bool(detect_collisions(image, obstacles).any())
    err_hit = bool(detect_collisions(flip_bit(image, bit), obstacles).any())
    return free_hit and not err_hit


def check_fast_path(
    motion_set: MotionSet,
    report: CefReport,
    cache: ErroneousSweptCache,
    obstacles: np.ndarray,
    n_pairs: int,
    seed: int,
    enrich: float = 0.5,
):
    """Compare the cached set-algebra outcome with full simulation on random pairs.

    Half of the pairs (``enrich``) are drawn from bits with a non-empty
    critical space so that SDC-C outcomes actually occur in the sample.
    Returns (pairs checked, sdcc count, mismatches).
    """
    rng = substream(seed, "oracle-fast-path", list(CdmKind).index(report.kind))
    live = np.flatnonzero(report.critical_sizes() > 0)
    n_live = int(n_pairs * enrich) if live.size else 0
    bits = np.concatenate(
        [rng.choice(live, n_live) if n_live else np.zeros(0, np.int64), rng.integers(0, report.n_bits, n_pairs - n_live)]
    )
    scen = rng.integers(0, obstacles.shape[0], n_pairs)
    fast = sdcc_rows(report, cache, bits, obstacles)[np.arange(n_pairs), scen]
    grid = report.grid
    mismatches = 0
    for i, (b, s) in enumerate(zip(bits.tolist(), scen.tolist())):
        m, _, local = report.locate(b)
        swept = motion_set.motions[m].swept
        obs = VoxelSet(grid, np.flatnonzero(obstacles[s]))
        sim = simulate_sdcc(swept, report.kind, local, obs)
        via_cache = classify_sdcc(cache.error_free(m), cache.erroneous(report, b), obs) is SdccOutcome.SDCC
        if not (sim == via_cache == bool(fast[i])):
            mismatches += 1
    return n_pairs, int(fast.sum()), mismatches


# ---------------------------------------------------------------------------
# reference flip scenes on an 8^3 grid


@dataclass(frozen=True)
class FlipScene:
    name: str
    kind: CdmKind
    swept: VoxelSet
    bit: int
    expected_cef: int
    note: str


def reference_scenes() -> list[FlipScene]:
    g = GridSpec(8)
    w = g.depth
    # A2, two-voxel box; the LSB of hi.y (field 4) shrinks it by one voxel
    box = VoxelSet.from_cells(g, [(0, 0, 0), (0, 1, 0)])
    # A2, two overlapping boxes; shrinking the second one uncovers nothing
    overlap = VoxelSet.from_cells(g, [(3, 5, 4), (4, 5, 4), (4, 4, 4)])
    # A3, root with octants 0 and 3 full and octant 1 partial; the partial
    # child holds a 2x2x2 block that touches both full octants
    cube = np.zeros(g.shape, dtype=bool)
    cube[0:4, 0:4, 0:4] = True
    cube[4:8, 4:8, 0:4] = True
    cube[4:6, 2:4, 0:2] = True
    tree = VoxelSet.from_mask(g, cube)
    return [
        FlipScene("box-shrink", CdmKind.A2, box, 4 * w + (w - 1), 5, "box shrinks by one voxel"),
        FlipScene("box-masked", CdmKind.A2, overlap, 6 * w + 4 * w + (w - 1), 0, "shrunk region still covered by another box"),
        FlipScene("octree-partial-empty", CdmKind.A3, tree, 2 * 1 + 1, 16, "partial octant read as empty"),
        FlipScene("octree-false-positive", CdmKind.A3, tree, 24 + 0, 0, "empty octant read as full"),
    ]


def scene_cef(scene: FlipScene) -> int:
    image = encode(scene.kind, scene.swept)
    err = decode(flip_bit(image, scene.bit))
    return exposed_surface_area(scene.swept - err, err)
