"""Fault-injection campaigns: CEF measurement, SDC-C estimation and bookkeeping.

A bit flip turns the stored swept space ``S`` into ``(S - C) | A`` where ``C``
(the critical space) is what the flip drops and ``A`` what it spuriously adds.
For an obstacle set ``O``, an SDC-C (missed collision) happens iff ``S & O`` is
non-empty while ``((S - C) | A) & O`` is empty, i.e. every obstacle cell that
hits the motion lies inside ``C`` and no obstacle touches ``A``. All three
campaign modes evaluate that condition on cached ``(C, A)`` pairs instead of
re-simulating the CDM per scenario.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .cdm import BitImage, CapacityError, CdmKind, decode_mask, detect_collisions, encode, flip_bit, flip_deltas, structure_bits
from .geometry import GridSpec, VoxelSet, exposed_faces, neighbour_count
from .robot import MotionSet
from .seeding import substream
from .store import dumps_json, read_container, write_container

log = logging.getLogger(__name__)


class FIError(RuntimeError):
    pass


class SdccOutcome(str, enum.Enum):
    SDCC = "sdcc"
    MASKED = "masked"
    FALSE_POSITIVE_ONLY = "false_positive_only"
    BENIGN = "benign"


def classify_sdcc(error_free: VoxelSet, erroneous: VoxelSet, obstacles: VoxelSet) -> SdccOutcome:
    if not (error_free.grid == erroneous.grid == obstacles.grid):
        raise ValueError("grid mismatch")
    if erroneous == error_free:
        return SdccOutcome.MASKED
    hit_free = not error_free.isdisjoint(obstacles)
    hit_err = not erroneous.isdisjoint(obstacles)
    if hit_free and not hit_err:
        return SdccOutcome.SDCC
    if hit_err and not hit_free:
        return SdccOutcome.FALSE_POSITIVE_ONLY
    return SdccOutcome.BENIGN


# ---------------------------------------------------------------------------
# bookkeeping


@dataclass
class FiBudget:
    mode: str
    M: int | None = None
    scenario_count: int = 0
    seed: int | None = None
    run_counter: int = 0

    def charge(self, runs: int):
        if runs < 0:
            raise ValueError("run counts only grow")
        self.run_counter += int(runs)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "M": self.M,
            "scenario_count": self.scenario_count,
            "seed": self.seed,
            "run_counter": self.run_counter,
        }


def _segment_sums(values: np.ndarray, ptr: np.ndarray) -> np.ndarray:
    cs = np.zeros(values.size + 1, dtype=np.int64)
    np.cumsum(values, out=cs[1:])
    return cs[ptr[1:]] - cs[ptr[:-1]]


# ---------------------------------------------------------------------------
# phase 1


@dataclass
class CefReport:
    """Per-bit CEF and critical space for every motion of one CDM kind.

    Bits are numbered globally: motion ``m`` owns ``motion_ptr[m]`` up to
    ``motion_ptr[m + 1]``, in its image's bit order. Critical spaces are CSR
    rows ``crit_cells[crit_ptr[b]:crit_ptr[b + 1]]`` of linear cell indices.
    """

    kind: CdmKind
    grid: GridSpec
    width: int
    motion_ptr: np.ndarray
    cef: np.ndarray
    crit_ptr: np.ndarray
    crit_cells: np.ndarray
    failed: dict = field(default_factory=dict)

    @property
    def n_bits(self) -> int:
        return int(self.cef.size)

    @property
    def n_motions(self) -> int:
        return self.motion_ptr.size - 1

    @property
    def n_structures(self) -> int:
        return self.n_bits // self.width

    def motion_of(self, bits) -> np.ndarray:
        return np.searchsorted(self.motion_ptr, bits, side="right") - 1

    def locate(self, b: int) -> tuple[int, int, int]:
        """Global bit -> (motion_id, structure_id, bit index within the image)."""
        m = int(self.motion_of(b))
        local = int(b - self.motion_ptr[m])
        return m, local // self.width, local

    def critical(self, b: int) -> VoxelSet:
        return VoxelSet(self.grid, self.crit_cells[self.crit_ptr[b] : self.crit_ptr[b + 1]])

    def critical_sizes(self) -> np.ndarray:
        return np.diff(self.crit_ptr)

    def structure_ids(self) -> np.ndarray:
        """Global structure index of each bit (motion-major, then structure id)."""
        return np.arange(self.n_bits) // self.width

    def bit_offsets(self) -> np.ndarray:
        """Offset of each bit inside its structure."""
        return np.arange(self.n_bits) % self.width


@dataclass
class ErroneousSweptCache:
    """Error-free swept spaces plus, per bit, the cells a flip adds.

    The erroneous swept space of bit ``b`` of motion ``m`` is
    ``swept[m] - critical[b] | added[b]``.
    """

    grid: GridSpec
    swept_ptr: np.ndarray
    swept_cells: np.ndarray
    add_ptr: np.ndarray
    add_cells: np.ndarray

    def swept(self, m: int) -> np.ndarray:
        return self.swept_cells[self.swept_ptr[m] : self.swept_ptr[m + 1]]

    def added(self, b: int) -> np.ndarray:
        return self.add_cells[self.add_ptr[b] : self.add_ptr[b + 1]]

    def erroneous(self, report: CefReport, b: int) -> VoxelSet:
        m = int(report.motion_of(b))
        crit = report.crit_cells[report.crit_ptr[b] : report.crit_ptr[b + 1]]
        keep = np.setdiff1d(self.swept(m), crit, assume_unique=True)
        return VoxelSet(self.grid, np.concatenate([keep, self.added(b)]))

    def error_free(self, m: int) -> VoxelSet:
        return VoxelSet(self.grid, self.swept(m))


def _adjacent_pairs(grid: GridSpec, a: np.ndarray, b: np.ndarray) -> int:
    """Number of face-adjacent (cell in ``a``, cell in ``b``) pairs."""
    if a.size == 0 or b.size == 0:
        return 0
    ca = grid.coords(a)
    cb = grid.coords(b)
    if a.size * b.size <= 4096:
        d = np.abs(ca[:, None, :] - cb[None, :, :]).sum(axis=2)
        return int(np.count_nonzero(d == 1))
    lo = np.minimum(ca.min(0), cb.min(0))
    hi = np.maximum(ca.max(0), cb.max(0)) + 1
    shape = tuple(hi - lo)
    ma = np.zeros(shape, dtype=bool)
    mb = np.zeros(shape, dtype=bool)
    ma[tuple((ca - lo).T)] = True
    mb[tuple((cb - lo).T)] = True
    return int(neighbour_count(ma, mb).sum())


def _motion_phase1(kind: CdmKind, swept: VoxelSet, motion_id: int, engine: str):
    """Algorithm-1 loop for one motion.

    Returns (cef, crit_ptr, crit_cells, add_ptr, add_cells) with local bit order.
    """
    grid = swept.grid
    image = encode(kind, swept, motion_id)
    swept_mask = swept.mask().ravel()
    if engine == "simulate":
        return _simulate_phase1(image, swept, swept_mask)
    d = flip_deltas(image, swept_mask)
    # critical space = query voxels (the swept space) reported collision-free;
    # every removed cell belongs to the swept space, so that is exactly `removed`
    free = 6 - neighbour_count(swept.mask(), swept.mask()).ravel()
    cef = _segment_sums(free[d.removed], d.removed_ptr)
    rlen = np.diff(d.removed_ptr)
    alen = np.diff(d.added_ptr)
    both = np.flatnonzero((rlen > 0) & (alen > 0))
    if both.size:
        single = both[(rlen[both] == 1) & (alen[both] == 1)]
        if single.size:
            ca = grid.coords(d.removed[d.removed_ptr[single]])
            cb = grid.coords(d.added[d.added_ptr[single]])
            cef[single] -= (np.abs(ca - cb).sum(axis=1) == 1).astype(np.int64)
        for b in both[(rlen[both] > 1) | (alen[both] > 1)]:
            cef[b] -= _adjacent_pairs(grid, d.removed_of(b), d.added_of(b))
    return cef.astype(np.int32), d.removed_ptr, d.removed, d.added_ptr, d.added


def _simulate_phase1(image: BitImage, swept: VoxelSet, swept_mask: np.ndarray):
    """Literal Algorithm 1: flip, run the CDM on the swept voxels, collect misses."""
    cef = np.zeros(image.n_bits, dtype=np.int32)
    crit, added = [], []
    for b in range(image.n_bits):
        faulty = flip_bit(image, b)
        vec = detect_collisions(faulty, swept)
        c = swept.indices[~vec]
        err = decode_mask(faulty)
        crit.append(c)
        added.append(np.flatnonzero(err & ~swept_mask))
        cm = np.zeros(swept_mask.size, dtype=bool)
        cm[c] = True
        cef[b] = exposed_faces(cm.reshape(swept.grid.shape), err.reshape(swept.grid.shape))
    cp = np.zeros(len(crit) + 1, dtype=np.int64)
    np.cumsum([x.size for x in crit], out=cp[1:])
    ap = np.zeros(len(added) + 1, dtype=np.int64)
    np.cumsum([x.size for x in added], out=ap[1:])
    cat = lambda xs: np.concatenate(xs).astype(np.int64) if xs else np.zeros(0, np.int64)
    return cef, cp, cat(crit), ap, cat(added)


def _phase1_job(args):
    kind, swept, mid, engine = args
    try:
        return _motion_phase1(kind, swept, mid, engine)
    except CapacityError as e:
        return e


def run_phase1(
    motion_set: MotionSet, kind, jobs: int = 1, engine: str = "fast"
) -> tuple[CefReport, ErroneousSweptCache]:
    """Phase 1 over a whole motion set: CEF report plus the erroneous-swept cache.

    ``engine="fast"`` uses per-kind flip deltas; ``"simulate"`` runs the CDM
    model once per bit. Motions whose encoding fails are recorded in
    ``report.failed`` and contribute no bits.
    """
    kind = CdmKind.parse(kind)
    if engine not in ("fast", "simulate"):
        raise ValueError(f"unknown phase-1 engine {engine!r}")
    grid = motion_set.grid
    work = [(kind, m.swept, m.id, engine) for m in motion_set.motions]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_phase1_job, work, chunksize=8))
    else:
        results = [_phase1_job(w) for w in work]
    failed = {}
    motion_ptr = [0]
    cefs, cptrs, ccells, aptrs, acells = [], [], [], [], []
    cbase = abase = 0
    for m, res in zip(motion_set.motions, results):
        if isinstance(res, Exception):
            failed[m.id] = str(res)
            log.warning("motion %d not encodable as %s: %s", m.id, kind.value, res)
            motion_ptr.append(motion_ptr[-1])
            continue
        cef, cp, cc, ap, ac = res
        cefs.append(cef)
        cptrs.append(cp[1:] + cbase)
        ccells.append(cc)
        aptrs.append(ap[1:] + abase)
        acells.append(ac)
        cbase += cc.size
        abase += ac.size
        motion_ptr.append(motion_ptr[-1] + cef.size)

    def cat(xs, dtype):
        return np.concatenate(xs).astype(dtype) if xs else np.zeros(0, dtype)

    report = CefReport(
        kind,
        grid,
        structure_bits(kind, grid),
        np.asarray(motion_ptr, dtype=np.int64),
        cat(cefs, np.int32),
        np.concatenate([[0], cat(cptrs, np.int64)]).astype(np.int64),
        cat(ccells, np.int32),
        failed,
    )
    sw_ptr = np.zeros(len(motion_set.motions) + 1, dtype=np.int64)
    np.cumsum([len(m.swept) for m in motion_set.motions], out=sw_ptr[1:])
    cache = ErroneousSweptCache(
        grid,
        sw_ptr,
        cat([m.swept.indices for m in motion_set.motions], np.int32),
        np.concatenate([[0], cat(aptrs, np.int64)]).astype(np.int64),
        cat(acells, np.int32),
    )
    return report, cache


def phase1_cef(motion_set: MotionSet, kind, jobs: int = 1, engine: str = "fast") -> CefReport:
    return run_phase1(motion_set, kind, jobs, engine)[0]


# ---------------------------------------------------------------------------
# SDC-C engine


def obstacle_matrix(scenarios: Sequence, grid: GridSpec) -> np.ndarray:
    """(scenarios, cells) boolean occupancy matrix."""
    out = np.zeros((len(scenarios), grid.n_cells), dtype=bool)
    for i, s in enumerate(scenarios):
        occ = s.occupancy if hasattr(s, "occupancy") else s
        out[i, occ.indices] = True
    return out


def sdcc_rows(report: CefReport, cache: ErroneousSweptCache, bits: np.ndarray, obstacles: np.ndarray) -> np.ndarray:
    """SDC-C outcome of every (bit, scenario) pair: bool array (len(bits), scenarios).

    Equivalent to ``classify_sdcc(...) is SDCC`` on every pair.
    """
    bits = np.asarray(bits, dtype=np.int64)
    out = np.zeros((bits.size, obstacles.shape[0]), dtype=bool)
    if bits.size == 0:
        return out
    motions = report.motion_of(bits)
    order = np.argsort(motions, kind="stable")
    bounds = np.flatnonzero(np.diff(motions[order])) + 1
    for rows in np.split(order, bounds):
        m = int(motions[rows[0]])
        out[rows] = _motion_rows(report, cache, m, bits[rows], obstacles)
    return out


def _motion_rows(report, cache, m, bits, obstacles) -> np.ndarray:
    sw = cache.swept(m)
    res = np.zeros((bits.size, obstacles.shape[0]), dtype=bool)
    crit_len = report.crit_ptr[bits + 1] - report.crit_ptr[bits]
    live = np.flatnonzero(crit_len > 0)
    if live.size == 0 or sw.size == 0:
        return res
    o_sw = obstacles[:, sw]
    h = o_sw.sum(axis=1)
    scen = np.flatnonzero(h > 0)
    if scen.size == 0:
        return res
    # dedupe identical critical spaces
    keys = {}
    crit_id = np.empty(live.size, dtype=np.int64)
    uniq = []
    for i, b in enumerate(bits[live]):
        cells = report.crit_cells[report.crit_ptr[b] : report.crit_ptr[b + 1]]
        k = cells.tobytes()
        j = keys.get(k)
        if j is None:
            j = keys[k] = len(uniq)
            uniq.append(cells)
        crit_id[i] = j
    cm = np.zeros((len(uniq), sw.size), dtype=np.float32)
    for j, cells in enumerate(uniq):
        cm[j, np.searchsorted(sw, cells)] = 1.0
    hits = o_sw[scen].astype(np.float32)
    contained = (cm @ hits.T) == h[scen][None, :]  # every hitting cell is critical
    rows = contained[crit_id]
    cand = np.flatnonzero(rows.any(axis=1))
    alen = cache.add_ptr[bits[live[cand]] + 1] - cache.add_ptr[bits[live[cand]]]
    cand = cand[alen > 0]
    if cand.size:
        # obstacles touching the added cells are still detected
        obs_t = np.ascontiguousarray(obstacles[scen].T)
        for i in cand:
            rows[i] &= ~obs_t[cache.added(bits[live[i]])].any(axis=0)
    res[np.ix_(live, scen)] = rows
    return res


def sdcc_counts(report, cache, bits, obstacles, chunk: int = 20000) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    out = np.zeros(bits.size, dtype=np.int64)
    for s in range(0, bits.size, chunk):
        out[s : s + chunk] = sdcc_rows(report, cache, bits[s : s + chunk], obstacles).sum(axis=1)
    return out


# ---------------------------------------------------------------------------
# sample size


def z_value(confidence: float) -> float:
    return float(stats.norm.ppf(1.0 - (1.0 - confidence) / 2.0))


def sample_size(p_expected: float, population: float | None, confidence: float = 0.95, margin: float = 0.025) -> int:
    """Finite-population statistical-FI sample size."""
    if not 0.0 < p_expected < 1.0:
        raise ValueError(f"p_expected must be in (0, 1), got {p_expected}")
    if not margin > 0 or not 0.0 < confidence < 1.0:
        raise ValueError("need margin > 0 and confidence in (0, 1)")
    if population is not None and population < 1:
        raise ValueError("population must be >= 1")
    z = z_value(confidence)
    spread = z * z * p_expected * (1.0 - p_expected)
    if population is None or math.isinf(population):
        n = spread / margin**2
    else:
        n = population / (1.0 + margin**2 * (population - 1) / spread)
    n = max(1, math.ceil(n - 1e-9))
    return int(min(n, population)) if population is not None and not math.isinf(population) else n


# ---------------------------------------------------------------------------
# phase 2


@dataclass
class SdccGroup:
    cef: int
    n_bits: int
    sampled_bits: int
    trials: int
    sdcc: int
    p_hat: float
    confidence: float
    margin: float


@dataclass
class SdccTable:
    kind: CdmKind
    groups: list[SdccGroup]
    total_bits: int
    overall: float
    budget: FiBudget
    meta: dict = field(default_factory=dict)

    def p_by_cef(self) -> dict[int, float]:
        return {g.cef: g.p_hat for g in self.groups}

    def recompute_overall(self) -> float:
        """Bit-weighted mean of group probabilities."""
        if self.total_bits == 0:
            return 0.0
        return sum(g.p_hat * g.n_bits for g in self.groups) / self.total_bits

    def per_bit(self, report: CefReport) -> np.ndarray:
        lut = self.p_by_cef()
        values = np.array([lut.get(int(c), 0.0) for c in range(int(report.cef.max(initial=0)) + 1)])
        return values[report.cef]


def _group_margin(p, trials, n_bits, sampled, confidence) -> float:
    if trials == 0:
        return 0.0
    fpc = math.sqrt((n_bits - sampled) / (n_bits - 1)) if n_bits > 1 else 0.0
    return z_value(confidence) * math.sqrt(p * (1 - p) / trials) * fpc


def auto_m(
    report: CefReport,
    cache: ErroneousSweptCache,
    obstacles: np.ndarray,
    seed: int,
    confidence: float = 0.95,
    margin: float = 0.025,
    pilot_bits: int = 64,
) -> int:
    """Samples per CEF group, sized from a pilot of the most exposed bits.

    The pilot pools the top decile of positive-CEF bits (the highest single
    CEF value is usually a handful of bits at desk scale), estimates their
    SDC-C probability and feeds it to :func:`sample_size`.
    """
    pos = np.flatnonzero(report.cef > 0)
    if pos.size == 0:
        return 1
    cut = np.quantile(report.cef[pos], 0.9)
    top = pos[report.cef[pos] >= cut]
    rng = substream(seed, "phase2-pilot")
    pick = np.sort(rng.choice(top, size=min(pilot_bits, top.size), replace=False))
    p = sdcc_counts(report, cache, pick, obstacles).sum() / (pick.size * obstacles.shape[0])
    p = float(np.clip(p, 0.01, 0.5))
    return sample_size(p, None, confidence, margin)


def phase2_sdcc(
    report: CefReport,
    cache: ErroneousSweptCache,
    scenarios,
    M: int | str,
    seed: int,
    confidence: float = 0.95,
    margin: float = 0.025,
) -> SdccTable:
    """CEF-grouped SDC-C estimation.

    CEF-0 bits cannot produce a missed collision and get p=0 with no trials.
    Every other group samples ``min(M, size)`` bits without replacement and
    runs each sampled bit against the whole scenario batch.
    """
    obstacles = scenarios if isinstance(scenarios, np.ndarray) else obstacle_matrix(scenarios, report.grid)
    if obstacles.shape[0] == 0:
        raise FIError("phase 2 needs at least one scenario")
    if report.n_bits == 0:
        raise FIError("no CEF groups: the report holds no bits")
    if M == "auto":
        M = auto_m(report, cache, obstacles, seed, confidence, margin)
    M = int(M)
    if M < 1:
        raise FIError("M must be >= 1")
    S = obstacles.shape[0]
    budget = FiBudget("cef_aware", M, S, seed)
    budget.charge(report.n_bits)  # phase 1: one run per bit
    values, counts = np.unique(report.cef, return_counts=True)
    order = np.argsort(report.cef, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)])
    groups = []
    for gi, (cef, n) in enumerate(zip(values.tolist(), counts.tolist())):
        members = order[starts[gi] : starts[gi + 1]]
        if cef == 0:
            groups.append(SdccGroup(0, n, 0, 0, 0, 0.0, confidence, 0.0))
            continue
        k = min(M, n)
        rng = substream(seed, "phase2-group", cef)
        pick = np.sort(members[rng.choice(n, size=k, replace=False)])
        hits = int(sdcc_counts(report, cache, pick, obstacles).sum())
        trials = k * S
        budget.charge(trials)
        p = hits / trials
        groups.append(SdccGroup(cef, n, k, trials, hits, p, confidence, _group_margin(p, trials, n, k, confidence)))
    table = SdccTable(report.kind, groups, report.n_bits, 0.0, budget)
    table.overall = table.recompute_overall()
    return table


# ---------------------------------------------------------------------------
# exhaustive and uniform campaigns


@dataclass
class ExhaustiveResult:
    kind: CdmKind
    per_bit: np.ndarray  # SDC-C probability of each bit over the scenario batch
    sdcc_counts: np.ndarray
    overall: float
    budget: FiBudget


def exhaustive_fi(
    report: CefReport,
    cache: ErroneousSweptCache,
    scenarios,
    max_runs: float = 1e10,
) -> ExhaustiveResult:
    """Classify every (bit, scenario) pair.

    Pairs whose bit has an empty critical space are settled by the set
    identity (the erroneous swept space contains the error-free one) rather
    than evaluated; they are still counted as runs.
    """
    obstacles = scenarios if isinstance(scenarios, np.ndarray) else obstacle_matrix(scenarios, report.grid)
    S = obstacles.shape[0]
    runs = report.n_bits * S
    if runs > max_runs:
        raise FIError(
            f"exhaustive FI needs {runs:.3g} runs (> budget {max_runs:.3g}); use cef_aware or uniform_statistical"
        )
    budget = FiBudget("exhaustive", None, S, None)
    counts = sdcc_counts(report, cache, np.arange(report.n_bits), obstacles)
    budget.charge(runs)
    per_bit = counts / S if S else np.zeros(report.n_bits)
    overall = float(per_bit.mean()) if report.n_bits else 0.0
    return ExhaustiveResult(report.kind, per_bit, counts, overall, budget)


@dataclass
class UniformResult:
    kind: CdmKind
    estimate: float
    ci_low: float
    ci_high: float
    n_samples: int
    sdcc: int
    budget: FiBudget


def uniform_statistical_fi(
    report: CefReport,
    cache: ErroneousSweptCache,
    scenarios,
    n_samples: int,
    seed: int,
    confidence: float = 0.95,
    replace: bool = True,
) -> UniformResult:
    """Uniform sampling of (bit, scenario) pairs; overall estimate only."""
    if n_samples < 1:
        raise FIError("n_samples must be >= 1")
    obstacles = scenarios if isinstance(scenarios, np.ndarray) else obstacle_matrix(scenarios, report.grid)
    S = obstacles.shape[0]
    population = report.n_bits * S
    if not replace and n_samples > population:
        raise FIError("cannot sample more pairs than exist without replacement")
    rng = substream(seed, "uniform-fi")
    flat = rng.choice(population, size=n_samples, replace=replace)
    bit, scen = np.divmod(flat, S)
    budget = FiBudget("uniform_statistical", None, S, seed)
    budget.charge(n_samples)
    hits = 0
    ubits, inv = np.unique(bit, return_inverse=True)
    for s in range(0, ubits.size, 20000):
        sel = np.flatnonzero((inv >= s) & (inv < s + 20000))
        rows = sdcc_rows(report, cache, ubits[s : s + 20000], obstacles)
        hits += int(rows[inv[sel] - s, scen[sel]].sum())
    est = hits / n_samples
    ci = stats.binomtest(hits, n_samples).proportion_ci(confidence, method="wilson")
    return UniformResult(report.kind, est, float(ci.low), float(ci.high), n_samples, hits, budget)


def speedup(exhaustive_runs: int, runs: int) -> float:
    return exhaustive_runs / runs if runs else math.inf


def exhaustive_run_count(report: CefReport, scenario_count: int) -> int:
    return report.n_bits * scenario_count


def cef_aware_run_bound(table: SdccTable) -> int:
    positive = sum(1 for g in table.groups if g.cef > 0)
    return table.total_bits + positive * table.budget.M * table.budget.scenario_count


# ---------------------------------------------------------------------------
# persistence

REPORT_MAGIC = b"CEFREP01"
EXHAUSTIVE_MAGIC = b"CEFEXH01"


def save_phase1(path, report: CefReport, cache: ErroneousSweptCache, meta: dict | None = None):
    header = {
        "kind": report.kind.value,
        "grid": report.grid.to_dict(),
        "width": report.width,
        "failed": {str(k): v for k, v in sorted(report.failed.items())},
        "meta": meta or {},
    }
    arrays = {
        "motion_ptr": report.motion_ptr,
        "cef": report.cef,
        "crit_ptr": report.crit_ptr,
        "crit_cells": report.crit_cells,
        "swept_ptr": cache.swept_ptr,
        "swept_cells": cache.swept_cells,
        "add_ptr": cache.add_ptr,
        "add_cells": cache.add_cells,
    }
    return write_container(path, REPORT_MAGIC, header, arrays)


def load_phase1(path) -> tuple[CefReport, ErroneousSweptCache, dict]:
    header, a = read_container(path, REPORT_MAGIC)
    grid = GridSpec.from_dict(header["grid"])
    report = CefReport(
        CdmKind.parse(header["kind"]),
        grid,
        header["width"],
        a["motion_ptr"],
        a["cef"],
        a["crit_ptr"],
        a["crit_cells"],
        {int(k): v for k, v in header["failed"].items()},
    )
    cache = ErroneousSweptCache(grid, a["swept_ptr"], a["swept_cells"], a["add_ptr"], a["add_cells"])
    return report, cache, header.get("meta", {})


def write_cef_csv(path, report: CefReport):
    """One row per bit: motion, structure, bit index, CEF, critical-space size."""
    motion = np.repeat(np.arange(report.n_motions), np.diff(report.motion_ptr))
    local = np.arange(report.n_bits) - report.motion_ptr[motion]
    rows = np.column_stack([motion, local // report.width, local, report.cef, report.critical_sizes()])
    with open(path, "w") as fh:
        fh.write("motion_id,structure_id,bit_index,cef,critical_voxels\n")
        np.savetxt(fh, rows, fmt="%d", delimiter=",")


def table_to_dict(table: SdccTable) -> dict:
    return {
        "kind": table.kind.value,
        "total_bits": table.total_bits,
        "overall": table.overall,
        "budget": table.budget.to_dict(),
        "groups": [g.__dict__ for g in table.groups],
        "meta": table.meta,
    }


def table_from_dict(doc: dict) -> SdccTable:
    b = doc["budget"]
    budget = FiBudget(b["mode"], b["M"], b["scenario_count"], b["seed"], b["run_counter"])
    groups = [SdccGroup(**g) for g in doc["groups"]]
    return SdccTable(CdmKind.parse(doc["kind"]), groups, doc["total_bits"], doc["overall"], budget, doc.get("meta", {}))


def write_table_csv(path, table: SdccTable, meta: dict):
    cols = ["cef", "n_bits", "sampled_bits", "trials", "sdcc", "p_hat", "confidence", "margin"]
    with open(path, "w") as fh:
        fh.write("# " + dumps_json({"budget": table.budget.to_dict(), **meta}) + "\n")
        fh.write(",".join(cols) + "\n")
        for g in table.groups:
            fh.write(",".join(repr(getattr(g, c)) for c in cols) + "\n")


def save_exhaustive(path, result: ExhaustiveResult, meta: dict | None = None):
    header = {"kind": result.kind.value, "overall": result.overall, "budget": result.budget.to_dict(), "meta": meta or {}}
    return write_container(path, EXHAUSTIVE_MAGIC, header, {"sdcc_counts": result.sdcc_counts})


def load_exhaustive(path) -> ExhaustiveResult:
    header, a = read_container(path, EXHAUSTIVE_MAGIC)
    b = header["budget"]
    budget = FiBudget(b["mode"], b["M"], b["scenario_count"], b["seed"], b["run_counter"])
    counts = a["sdcc_counts"]
    S = budget.scenario_count
    return ExhaustiveResult(CdmKind.parse(header["kind"]), counts / S, counts, header["overall"], budget)
