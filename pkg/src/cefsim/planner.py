"""FIT rates, selective-protection orderings, overhead curves and SIL verdicts."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .cdm import CdmKind, encode, morton_to_linear, parse_boxes, structure_bits
from .fi import CefReport
from .geometry import build_octree, octant_offset
from .robot import MotionSet
from .seeding import substream

DEFAULT_FRACTIONS = (0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


class PlannerError(ValueError):
    pass


# ---------------------------------------------------------------------------
# FIT


@dataclass(frozen=True)
class FitParams:
    total_bits: int
    fit_raw: float = 20.49
    N: float = 3600.0

    def __post_init__(self):
        if self.total_bits <= 0 or self.fit_raw <= 0 or self.N <= 0:
            raise PlannerError("FIT parameters must be positive")


def fit_rate(p_sdcc: float, params: FitParams) -> float:
    """Failures per 1e9 hours for a memory of ``total_bits`` with per-flip SDC-C probability ``p_sdcc``."""
    return params.total_bits / 1e6 * p_sdcc * params.fit_raw * params.N


SIL_MAX_FIT = {1: 10_000.0, 2: 1_000.0, 3: 100.0, 4: 10.0}


@dataclass(frozen=True)
class SilTarget:
    level: int

    @property
    def max_fit(self) -> float:
        return SIL_MAX_FIT[self.level]


def sil_verdict(fit: float) -> int | None:
    """Highest SIL whose (inclusive) FIT bound is met, or None."""
    if fit < 0 or math.isnan(fit):
        raise PlannerError(f"FIT must be >= 0, got {fit}")
    met = [lvl for lvl, bound in SIL_MAX_FIT.items() if fit <= bound]
    return max(met) if met else None


# ---------------------------------------------------------------------------
# accelerators and hardening


@dataclass(frozen=True)
class Accelerator:
    name: str
    kind: CdmKind
    n_cdcs: int | None  # None: one CDC per motion
    N: float
    area_share: float  # storage fraction of CDM area
    power_ratio: float  # storage power share / storage area share
    techniques: tuple[str, ...]

    def resident_fraction(self, n_motions: int) -> float:
        if self.n_cdcs is None or n_motions == 0:
            return 1.0
        return min(1.0, self.n_cdcs / n_motions)

    def fit_params(self, report: CefReport, fit_raw: float = 20.49) -> FitParams:
        bits = max(1, round(report.n_bits * self.resident_fraction(report.n_motions)))
        return FitParams(bits, fit_raw, self.N)


LATCH = ("RCC", "SEUT", "TMR")
ACCELERATORS = {
    "A1": Accelerator("A1", CdmKind.A1, None, 3600.0, 0.5, 0.6, LATCH),
    "A2": Accelerator("A2", CdmKind.A2, None, 3600.0, 0.5, 0.6, LATCH),
    "A3": Accelerator("A3", CdmKind.A3, 128, 1.0, 0.4, 0.75, ("ECC",)),
    "A3_scaled": Accelerator("A3_scaled", CdmKind.A3, None, 3600.0, 0.4, 0.75, ("ECC",)),
    "A4": Accelerator("A4", CdmKind.A4, None, 3600.0, 0.98, 1.0, ("ECC",)),
}

ECC_RATIO = {CdmKind.A3: 7 / 24, CdmKind.A4: 8 / 64}


def accelerator(name) -> Accelerator:
    try:
        return ACCELERATORS[str(name)]
    except KeyError:
        raise PlannerError(f"unknown accelerator {name!r}; choose from {sorted(ACCELERATORS)}") from None


def default_accelerator(kind) -> Accelerator:
    kind = CdmKind.parse(kind)
    return {CdmKind.A1: ACCELERATORS["A1"], CdmKind.A2: ACCELERATORS["A2"], CdmKind.A3: ACCELERATORS["A3_scaled"], CdmKind.A4: ACCELERATORS["A4"]}[kind]


@dataclass(frozen=True)
class HardeningModel:
    technique: str
    area_multiplier: float | None
    fit_divisor: float  # inf: protected bits contribute nothing

    def area_per_protected(self, kind: CdmKind) -> float:
        """Extra storage area per protected storage area."""
        if self.technique == "ECC":
            return ECC_RATIO[kind]
        return self.area_multiplier - 1.0


HARDENING = {
    "RCC": HardeningModel("RCC", 1.15, 6.3),
    "SEUT": HardeningModel("SEUT", 2.0, 37.0),
    "TMR": HardeningModel("TMR", 3.5, 1e6),
    "ECC": HardeningModel("ECC", None, math.inf),
}


def hardening(name) -> HardeningModel:
    try:
        return HARDENING[str(name).upper()]
    except KeyError:
        raise PlannerError(f"unknown hardening technique {name!r}; choose from {sorted(HARDENING)}") from None


def check_compatible(model: HardeningModel, acc: Accelerator):
    if model.technique not in acc.techniques:
        raise PlannerError(
            f"{model.technique} does not apply to {acc.name}: use one of {', '.join(acc.techniques)}"
        )


# ---------------------------------------------------------------------------
# heuristics


class Heuristic(str, enum.Enum):
    CEF = "cef"
    CS_VOLUME = "cs_volume"
    BIT_POSITION = "bit_position"
    ACCESS_FREQUENCY = "access_frequency"
    BOX_VOLUME = "box_volume"
    UNIFORM_RANDOM = "uniform_random"
    IDEAL = "ideal"

    @classmethod
    def parse(cls, value) -> "Heuristic":
        try:
            return cls(value)
        except ValueError:
            raise PlannerError(f"unknown heuristic {value!r}; choose from {[h.value for h in cls]}") from None


@dataclass
class PlannerAux:
    """Optional inputs some heuristics need."""

    per_bit_exact: np.ndarray | None = None  # exhaustive per-bit SDC-C probability
    access_counts: np.ndarray | None = None  # per structure
    box_volumes: np.ndarray | None = None  # per structure, A2 only
    seed: int = 0


@dataclass
class ProtectionPlan:
    heuristic: Heuristic
    kind: CdmKind
    width: int
    ordering: np.ndarray  # structure permutation (bit_position: the structure of each ranked bit)
    bit_order: np.ndarray  # every bit, most protected first

    @property
    def n_bits(self) -> int:
        return int(self.bit_order.size)

    @property
    def n_structures(self) -> int:
        return self.n_bits // self.width

    def protected_count(self, fraction: float) -> int:
        if not 0.0 <= fraction <= 1.0:
            raise PlannerError(f"fraction {fraction} outside [0, 1]")
        if self.heuristic is Heuristic.BIT_POSITION:
            return int(round(fraction * self.n_bits))
        return int(round(fraction * self.n_structures)) * self.width

    def protected_bits(self, fraction: float) -> np.ndarray:
        return np.sort(self.bit_order[: self.protected_count(fraction)])


def _bit_significance(kind: CdmKind, width: int, depth: int) -> np.ndarray:
    """Rank of each structure offset inside its field (0 = MSB)."""
    off = np.arange(width)
    if kind in (CdmKind.A1, CdmKind.A2):
        return off % depth
    if kind is CdmKind.A3:
        return np.where(off < 16, off % 2, off - 16)
    return off


def _descending(scores: np.ndarray) -> np.ndarray:
    # stable sort on the negated score keeps structure id ascending on ties
    return np.argsort(-np.asarray(scores, dtype=float), kind="stable")


def structure_scores(heuristic: Heuristic, report: CefReport, aux: PlannerAux) -> np.ndarray:
    n = report.n_structures
    sid = report.structure_ids()
    if heuristic is Heuristic.CEF:
        return np.bincount(sid, weights=report.cef, minlength=n)
    if heuristic is Heuristic.CS_VOLUME:
        return np.bincount(sid, weights=report.critical_sizes(), minlength=n)
    if heuristic is Heuristic.IDEAL:
        if aux.per_bit_exact is None:
            raise PlannerError("ideal ordering needs exhaustive per-bit SDC-C probabilities (run fi --mode exhaustive)")
        return np.bincount(sid, weights=aux.per_bit_exact, minlength=n)
    if heuristic is Heuristic.ACCESS_FREQUENCY:
        if aux.access_counts is None:
            raise PlannerError("access_frequency ordering needs traversal counts from a calibration scenario batch")
        return np.asarray(aux.access_counts, dtype=float)
    if heuristic is Heuristic.BOX_VOLUME:
        if report.kind is not CdmKind.A2:
            raise PlannerError("box_volume ordering is only defined for A2_box")
        if aux.box_volumes is None:
            raise PlannerError("box_volume ordering needs per-box voxel counts")
        return np.asarray(aux.box_volumes, dtype=float)
    raise PlannerError(f"{heuristic.value} has no structure score")


def rank_structures(heuristic, report: CefReport, aux: PlannerAux | None = None) -> ProtectionPlan:
    heuristic = Heuristic.parse(heuristic) if not isinstance(heuristic, Heuristic) else heuristic
    aux = aux or PlannerAux()
    n, w = report.n_structures, report.width
    if heuristic is Heuristic.BIT_POSITION:
        sig = np.tile(_bit_significance(report.kind, w, report.grid.depth), n)
        bit_order = np.lexsort((report.bit_offsets(), report.structure_ids(), sig))
        return ProtectionPlan(heuristic, report.kind, w, bit_order // w, bit_order)
    if heuristic is Heuristic.UNIFORM_RANDOM:
        ordering = substream(aux.seed, "uniform-random-protection").permutation(n)
    else:
        ordering = _descending(structure_scores(heuristic, report, aux))
    bit_order = (ordering[:, None] * w + np.arange(w)[None, :]).ravel()
    return ProtectionPlan(heuristic, report.kind, w, ordering, bit_order)


# ---------------------------------------------------------------------------
# auxiliary data


def box_volumes(motion_set: MotionSet) -> np.ndarray:
    """Voxel count of every A2 box, in report structure order."""
    out = []
    for m in motion_set.motions:
        img = encode(CdmKind.A2, m.swept, m.id)
        boxes = parse_boxes(img)
        ext = np.clip(boxes[:, 3:] - boxes[:, :3] + 1, 0, None)
        out.append(ext.prod(axis=1))
    return np.concatenate(out).astype(float) if out else np.zeros(0)


def _node_cubes(swept, depth: int) -> tuple[np.ndarray, np.ndarray]:
    """Origin and edge length of every node of the clean octree."""
    nodes = build_octree(swept, depth)
    origin = np.zeros((len(nodes), 3), dtype=np.int64)
    size = np.zeros(len(nodes), dtype=np.int64)
    size[0] = 2**depth
    for i, node in enumerate(nodes):
        half = size[i] // 2
        rank = 0
        for o, st in enumerate(node.octant_status):
            if st == 1:
                c = node.child_base + rank
                origin[c] = origin[i] + half * np.asarray(octant_offset(o))
                size[c] = half
                rank += 1
    return origin, size


def access_counts(motion_set: MotionSet, kind, obstacles: np.ndarray) -> np.ndarray:
    """Structure reads during collision checks over a scenario batch.

    A3: a node is read once per obstacle voxel whose lookup descends into it,
    i.e. per obstacle voxel inside its cube. A4: a word is read once per
    obstacle voxel it stores. A1/A2: every register is compared on every
    query, so all counts equal the batch size.
    """
    kind = CdmKind.parse(kind)
    grid = motion_set.grid
    per_cell = obstacles.sum(axis=0).reshape(grid.shape).astype(np.int64)
    out = []
    if kind is CdmKind.A3:
        sv = np.zeros(tuple(s + 1 for s in grid.shape), dtype=np.int64)
        sv[1:, 1:, 1:] = per_cell.cumsum(0).cumsum(1).cumsum(2)
        for m in motion_set.motions:
            o, s = _node_cubes(m.swept, grid.depth)
            x0, y0, z0 = o.T
            x1, y1, z1 = (o + s[:, None]).T
            tot = (
                sv[x1, y1, z1] - sv[x0, y1, z1] - sv[x1, y0, z1] - sv[x1, y1, z0]
                + sv[x0, y0, z1] + sv[x0, y1, z0] + sv[x1, y0, z0] - sv[x0, y0, z0]
            )
            out.append(tot)
    elif kind is CdmKind.A4:
        words = per_cell.ravel()[morton_to_linear(grid)].reshape(-1, 64).sum(axis=1)
        out = [words] * len(motion_set.motions)
    else:
        w = structure_bits(kind, grid)
        for m in motion_set.motions:
            n = len(encode(kind, m.swept, m.id).bits) // w
            out.append(np.full(n, obstacles.shape[0], dtype=np.int64))
    return np.concatenate(out).astype(float) if out else np.zeros(0)


# ---------------------------------------------------------------------------
# curves


@dataclass
class CurvePoint:
    fraction: float
    residual_fit: float
    area_overhead_pct: float = 0.0
    power_overhead_pct: float = 0.0
    sil: int | None = None


def _residual(plan: ProtectionPlan, per_bit: np.ndarray, fraction: float, params: FitParams, divisor: float) -> float:
    protected = np.zeros(per_bit.size, dtype=bool)
    protected[plan.bit_order[: plan.protected_count(fraction)]] = True
    exposed = float(per_bit[~protected].sum())
    if not math.isinf(divisor):
        exposed += float(per_bit[protected].sum()) / divisor
    return fit_rate(exposed / per_bit.size, params)


def fit_reduction_curve(
    plan: ProtectionPlan, per_bit: np.ndarray, params: FitParams, fractions: Sequence[float] = DEFAULT_FRACTIONS
) -> list[CurvePoint]:
    """Residual FIT when the top ``fraction`` of the ordering is made immune."""
    per_bit = np.asarray(per_bit, dtype=float)
    if per_bit.size != plan.n_bits:
        raise PlannerError("per-bit probabilities do not match the plan")
    pts = [CurvePoint(f, _residual(plan, per_bit, f, params, math.inf)) for f in fractions]
    for p in pts:
        p.sil = sil_verdict(p.residual_fit)
    return pts


def overhead_curve(
    plan: ProtectionPlan,
    per_bit: np.ndarray,
    model: HardeningModel,
    acc: Accelerator,
    params: FitParams,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
) -> list[CurvePoint]:
    """Area/power overhead against residual FIT for one hardening technique."""
    check_compatible(model, acc)
    if plan.kind is not acc.kind:
        raise PlannerError(f"plan is for {plan.kind.value}, accelerator {acc.name} uses {acc.kind.value}")
    per_bit = np.asarray(per_bit, dtype=float)
    unit = model.area_per_protected(acc.kind)
    pts = []
    for f in fractions:
        real = plan.protected_count(f) / plan.n_bits
        area = 100.0 * real * acc.area_share * unit
        fit = _residual(plan, per_bit, f, params, model.fit_divisor)
        pts.append(CurvePoint(f, fit, area, area * acc.power_ratio, sil_verdict(fit)))
    return pts


def full_protection_overhead(model: HardeningModel, acc: Accelerator) -> tuple[float, float]:
    check_compatible(model, acc)
    area = 100.0 * acc.area_share * model.area_per_protected(acc.kind)
    return area, area * acc.power_ratio


@dataclass
class SilCost:
    level: int
    technique: str | None
    fraction: float | None
    area_overhead_pct: float | None
    power_overhead_pct: float | None


def sil_costs(curves: Mapping[str, Sequence[CurvePoint]]) -> list[SilCost]:
    """Cheapest (technique, fraction) reaching each SIL across overhead curves."""
    out = []
    for level in sorted(SIL_MAX_FIT):
        best = None
        for tech, pts in curves.items():
            for p in pts:
                if p.sil is not None and p.sil >= level:
                    if best is None or p.area_overhead_pct < best[1].area_overhead_pct:
                        best = (tech, p)
                    break
        if best is None:
            out.append(SilCost(level, None, None, None, None))
        else:
            tech, p = best
            out.append(SilCost(level, tech, p.fraction, p.area_overhead_pct, p.power_overhead_pct))
    return out


def cef_cdf(report: CefReport) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative fraction of bits with CEF <= value."""
    values, counts = np.unique(report.cef, return_counts=True)
    return values, np.cumsum(counts) / max(report.n_bits, 1)
