"""Simplified serial arm, roadmap-style motion sets and swept-volume voxelisation.

Joint ``i`` rotates about the local z axis when ``i`` is even and about the
local y axis when ``i`` is odd. Every link points along its local +x axis, so
the all-zero pose lays the arm out along +x from the base.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import GridSpec, VoxelSet
from .seeding import substream

MOTIONSET_FORMAT = "cefsim.motionset/1"


class MotionSetError(ValueError):
    pass


@dataclass(frozen=True)
class ArmSpec:
    link_lengths: tuple[float, ...]
    link_radius: float
    joint_limits: tuple[tuple[float, float], ...] = ()
    base_position: tuple[float, float, float] | None = None

    def __post_init__(self):
        n = len(self.link_lengths)
        if not 1 <= n <= 7:
            raise MotionSetError(f"arm must have 1-7 joints, got {n}")
        if any(l <= 0 for l in self.link_lengths) or self.link_radius <= 0:
            raise MotionSetError("link lengths and radius must be positive")
        if not self.joint_limits:
            object.__setattr__(self, "joint_limits", tuple((-math.pi, math.pi) for _ in range(n)))
        if len(self.joint_limits) != n:
            raise MotionSetError("one joint limit per link required")
        for lo, hi in self.joint_limits:
            if not lo < hi:
                raise MotionSetError(f"bad joint limit ({lo}, {hi})")

    @property
    def dof(self) -> int:
        return len(self.link_lengths)

    @property
    def reach(self) -> float:
        return float(sum(self.link_lengths))

    def base(self, grid: GridSpec) -> np.ndarray:
        if self.base_position is None:
            return np.full(3, grid.physical_extent / 2.0)
        return np.asarray(self.base_position, dtype=float)

    def check_fits(self, grid: GridSpec):
        b = self.base(grid)
        if np.any(b - self.reach < -1e-9) or np.any(b + self.reach > grid.physical_extent + 1e-9):
            raise MotionSetError(
                f"arm reach {self.reach} cm from base {b.tolist()} leaves the "
                f"{grid.physical_extent} cm environment"
            )

    def to_dict(self) -> dict:
        return {
            "link_lengths": list(self.link_lengths),
            "link_radius": self.link_radius,
            "joint_limits": [list(l) for l in self.joint_limits],
            "base_position": None if self.base_position is None else list(self.base_position),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArmSpec":
        base = d.get("base_position")
        return cls(
            tuple(float(v) for v in d["link_lengths"]),
            float(d["link_radius"]),
            tuple((float(lo), float(hi)) for lo, hi in d.get("joint_limits") or ()),
            None if base is None else tuple(float(v) for v in base),
        )


@dataclass(frozen=True)
class Pose:
    joint_angles: tuple[float, ...]

    def validate(self, arm: ArmSpec):
        if len(self.joint_angles) != arm.dof:
            raise MotionSetError(f"pose has {len(self.joint_angles)} angles, arm has {arm.dof} joints")
        for a, (lo, hi) in zip(self.joint_angles, arm.joint_limits):
            if not lo <= a <= hi:
                raise MotionSetError(f"joint angle {a} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class Motion:
    id: int
    from_id: int
    to_id: int
    from_pose: Pose
    to_pose: Pose
    swept: VoxelSet


@dataclass
class MotionSet:
    arm: ArmSpec
    grid: GridSpec
    poses: list[Pose]
    motions: list[Motion]
    seed: int
    steps: int | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.motions)

    def to_json(self) -> str:
        doc = {
            "format": MOTIONSET_FORMAT,
            "seed": self.seed,
            "steps": self.steps,
            "arm": self.arm.to_dict(),
            "grid": self.grid.to_dict(),
            "poses": [list(p.joint_angles) for p in self.poses],
            "motions": [
                {
                    "id": m.id,
                    "from": m.from_id,
                    "to": m.to_id,
                    "voxels": base64.b64encode(m.swept.to_bitmap()).decode("ascii"),
                }
                for m in self.motions
            ],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    @classmethod
    def from_json(cls, text: str) -> "MotionSet":
        doc = json.loads(text)
        if doc.get("format") != MOTIONSET_FORMAT:
            raise MotionSetError(f"not a motion-set file (format={doc.get('format')!r})")
        arm = ArmSpec.from_dict(doc["arm"])
        grid = GridSpec.from_dict(doc["grid"])
        poses = [Pose(tuple(p)) for p in doc["poses"]]
        motions = []
        for i, m in enumerate(doc["motions"]):
            if m["id"] != i:
                raise MotionSetError("motion ids must be dense and ordered")
            sw = VoxelSet.from_bitmap(grid, base64.b64decode(m["voxels"]))
            motions.append(Motion(i, m["from"], m["to"], poses[m["from"]], poses[m["to"]], sw))
        return cls(arm, grid, poses, motions, doc["seed"], doc.get("steps"))

    @classmethod
    def load(cls, path) -> "MotionSet":
        return cls.from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# kinematics


def _rot(axis: str, theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    if axis == "z":
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def joint_axis(i: int) -> str:
    return "z" if i % 2 == 0 else "y"


def forward_kinematics(arm: ArmSpec, pose: Pose, base=None) -> np.ndarray:
    """Link segments in cm, shape (dof, 2, 3): ``[i, 0]`` start and ``[i, 1]`` end."""
    pose.validate(arm)
    p = np.zeros(3) if base is None else np.asarray(base, dtype=float)
    R = np.eye(3)
    segs = np.empty((arm.dof, 2, 3))
    for i, (length, theta) in enumerate(zip(arm.link_lengths, pose.joint_angles)):
        R = R @ _rot(joint_axis(i), theta)
        q = p + length * R[:, 0]
        segs[i, 0] = p
        segs[i, 1] = q
        p = q
    return segs


def _fk_batch(arm: ArmSpec, angles: np.ndarray, base: np.ndarray) -> np.ndarray:
    """Vectorised FK over (k, dof) angle rows -> (k, dof, 2, 3)."""
    k = angles.shape[0]
    R = np.broadcast_to(np.eye(3), (k, 3, 3)).copy()
    p = np.broadcast_to(base, (k, 3)).copy()
    out = np.empty((k, arm.dof, 2, 3))
    for i, length in enumerate(arm.link_lengths):
        c, s = np.cos(angles[:, i]), np.sin(angles[:, i])
        J = np.zeros((k, 3, 3))
        if joint_axis(i) == "z":
            J[:, 0, 0], J[:, 0, 1], J[:, 1, 0], J[:, 1, 1], J[:, 2, 2] = c, -s, s, c, 1.0
        else:
            J[:, 0, 0], J[:, 0, 2], J[:, 2, 0], J[:, 2, 2], J[:, 1, 1] = c, s, -s, c, 1.0
        R = R @ J
        q = p + length * R[:, :, 0]
        out[:, i, 0] = p
        out[:, i, 1] = q
        p = q
    return out


def default_steps(arm: ArmSpec, a: Pose, b: Pose, grid: GridSpec) -> int:
    """Interpolation steps keeping every link point's per-step travel <= half a voxel."""
    d = np.abs(np.asarray(b.joint_angles) - np.asarray(a.joint_angles))
    lever = np.cumsum(np.asarray(arm.link_lengths)[::-1])[::-1]  # joint i -> tip distance bound
    travel = float(np.dot(d, lever))
    return max(2, int(math.ceil(travel / (grid.voxel_size / 2.0))) + 1)


def interpolate(a: Pose, b: Pose, steps: int) -> np.ndarray:
    if steps < 2:
        raise MotionSetError("steps must be >= 2")
    k = np.arange(steps)
    n = steps - 1
    w = (k / n)[:, None]
    u = ((n - k) / n)[:, None]
    # u*a + w*b is reproduced bit-exactly when a and b swap and the rows reverse
    return u * np.asarray(a.joint_angles) + w * np.asarray(b.joint_angles)


def rasterize_segments(segs: np.ndarray, radius: float, grid: GridSpec) -> np.ndarray:
    """Cells whose centre lies within ``radius`` of any segment; flat bool mask."""
    centers = grid.centers()
    segs = segs.reshape(-1, 2, 3)
    lo = segs.min(axis=(0, 1)) - radius
    hi = segs.max(axis=(0, 1)) + radius
    near = np.all((centers >= lo) & (centers <= hi), axis=1)
    cand = np.flatnonzero(near)
    out = np.zeros(grid.n_cells, dtype=bool)
    if cand.size == 0:
        return out
    c = centers[cand]
    p0 = segs[:, 0]
    d = segs[:, 1] - p0
    dd = np.einsum("ij,ij->i", d, d)
    dd = np.where(dd > 0, dd, 1.0)
    r2 = radius * radius
    hit = np.zeros(cand.size, dtype=bool)
    for start in range(0, segs.shape[0], 64):
        sl = slice(start, start + 64)
        rel = c[:, None, :] - p0[None, sl, :]
        t = np.clip(np.einsum("vkj,kj->vk", rel, d[sl]) / dd[sl], 0.0, 1.0)
        diff = rel - t[:, :, None] * d[None, sl, :]
        hit |= (np.einsum("vkj,vkj->vk", diff, diff) <= r2).any(axis=1)
    out[cand[hit]] = True
    return out


def swept_volume(arm: ArmSpec, a: Pose, b: Pose, grid: GridSpec, steps: int | None = None) -> VoxelSet:
    """Voxels touched by the arm's capsules along the linear joint-space path a -> b."""
    if steps is None:
        steps = default_steps(arm, a, b, grid)
    angles = interpolate(a, b, steps)
    segs = _fk_batch(arm, angles, arm.base(grid))
    mask = rasterize_segments(segs, arm.link_radius, grid)
    return VoxelSet(grid, np.flatnonzero(mask))


# ---------------------------------------------------------------------------
# motion sets


def _select_edges(poses: np.ndarray, n_motions: int) -> list[tuple[int, int]]:
    n = poses.shape[0]
    tree = cKDTree(poses)
    k = 1
    while True:
        kk = min(n, k + 1)
        dist, nbr = tree.query(poses, k=kk)
        dist = np.atleast_2d(dist)
        nbr = np.atleast_2d(nbr)
        edges = {}
        for i in range(n):
            order = np.lexsort((nbr[i], dist[i]))
            rank = 0
            for j in order:
                j = int(nbr[i, j])
                if j == i:
                    continue
                rank += 1
                if rank > k:
                    break
                key = (min(i, j), max(i, j))
                d = float(np.linalg.norm(poses[i] - poses[j]))
                prev = edges.get(key)
                if prev is None or rank < prev[0]:
                    edges[key] = (rank, d)
        if len(edges) >= n_motions or k >= n - 1:
            break
        k += 1
    ranked = sorted(edges.items(), key=lambda kv: (kv[1][0], kv[1][1], kv[0]))
    return sorted(key for key, _ in ranked[:n_motions])


def generate_motion_set(
    arm: ArmSpec,
    grid: GridSpec,
    n_poses: int,
    n_motions: int,
    seed: int,
    steps: int | None = None,
    jobs: int = 1,
) -> MotionSet:
    if n_poses < 2 or n_motions < 1:
        raise MotionSetError("need at least 2 poses and 1 motion")
    max_edges = n_poses * (n_poses - 1) // 2
    if n_motions > max_edges:
        raise MotionSetError(
            f"n_motions={n_motions} unreachable: {n_poses} poses admit at most {max_edges} edges"
        )
    arm.check_fits(grid)
    rng = substream(seed, "poses")
    lo = np.array([l for l, _ in arm.joint_limits])
    hi = np.array([h for _, h in arm.joint_limits])
    angles = lo + rng.random((n_poses, arm.dof)) * (hi - lo)
    poses = [Pose(tuple(float(v) for v in row)) for row in angles]
    edges = _select_edges(angles, n_motions)
    work = [(arm, poses[i], poses[j], grid, steps) for i, j in edges]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as ex:
            swept = list(ex.map(_swept_job, work, chunksize=16))
    else:
        swept = [_swept_job(w) for w in work]
    motions = [
        Motion(mid, i, j, poses[i], poses[j], sw) for mid, ((i, j), sw) in enumerate(zip(edges, swept))
    ]
    return MotionSet(arm, grid, poses, motions, seed, steps)


def _swept_job(args) -> VoxelSet:
    arm, a, b, grid, steps = args
    return swept_volume(arm, a, b, grid, steps)


def motion_set_from_swept(grid: GridSpec, swept_sets: Sequence[VoxelSet], arm: ArmSpec | None = None) -> MotionSet:
    """Wrap externally supplied swept spaces as a motion set (poses are placeholders)."""
    arm = arm or ArmSpec((grid.physical_extent / 4,), grid.voxel_size / 2)
    p = Pose((0.0,) * arm.dof)
    motions = [Motion(i, 0, 0, p, p, s) for i, s in enumerate(swept_sets)]
    return MotionSet(arm, grid, [p], motions, seed=0)
