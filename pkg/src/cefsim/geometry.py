"""Voxel-grid primitives.

Cells are addressed by integer ``(x, y, z)`` triples on a cubic grid. Internally
a :class:`VoxelSet` keeps a sorted array of *linear* indices
``(x * R + y) * R + z``, which is also the canonical (lexicographic) iteration
order, and a dense boolean mask ``mask[x, y, z]`` when needed.

Two serialisations are supported:

* text: one ``x,y,z`` line per cell, lexicographic order;
* packed bitmap: ``R**3`` bits, bit ``i = x + R*y + R*R*z`` (x fastest),
  packed eight per byte, least significant bit first.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np

# face neighbours, 6-connectivity
FACE_OFFSETS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    resolution: int
    physical_extent: float = 90.0

    def __post_init__(self):
        r = self.resolution
        if not isinstance(r, (int, np.integer)) or r < 2 or r & (r - 1):
            raise GeometryError(f"resolution must be a power of two >= 2, got {r!r}")
        if not self.physical_extent > 0:
            raise GeometryError(f"physical_extent must be positive, got {self.physical_extent!r}")

    @property
    def depth(self) -> int:
        return int(self.resolution).bit_length() - 1

    @property
    def n_cells(self) -> int:
        return self.resolution**3

    @property
    def voxel_size(self) -> float:
        return self.physical_extent / self.resolution

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.resolution,) * 3

    def linear(self, x, y, z):
        r = self.resolution
        return (np.asarray(x) * r + y) * r + z

    def coords(self, idx) -> np.ndarray:
        """Linear indices -> (n, 3) integer coordinates."""
        return np.stack(np.unravel_index(np.asarray(idx, dtype=np.int64), self.shape), axis=-1)

    def centers(self) -> np.ndarray:
        """Voxel centres in cm, (R**3, 3), lexicographic order."""
        return _centers(self.resolution, float(self.physical_extent))

    def in_bounds(self, cell) -> bool:
        return all(0 <= int(c) < self.resolution for c in cell)

    def to_dict(self) -> dict:
        return {"resolution": int(self.resolution), "physical_extent": float(self.physical_extent)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(int(d["resolution"]), float(d["physical_extent"]))


_CENTER_CACHE: dict = {}


def _centers(r: int, extent: float) -> np.ndarray:
    key = (r, extent)
    if key not in _CENTER_CACHE:
        axis = (np.arange(r) + 0.5) * (extent / r)
        gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
        c = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        c.setflags(write=False)
        _CENTER_CACHE[key] = c
    return _CENTER_CACHE[key]


class VoxelSet:
    """Immutable sparse set of cells on one grid."""

    __slots__ = ("grid", "_idx", "__dict__")

    def __init__(self, grid: GridSpec, indices=()):
        idx = np.unique(np.asarray(indices, dtype=np.int64).ravel())
        if idx.size and (idx[0] < 0 or idx[-1] >= grid.n_cells):
            raise GeometryError("voxel index out of bounds")
        idx.setflags(write=False)
        self.grid = grid
        self._idx = idx

    @classmethod
    def from_cells(cls, grid: GridSpec, cells: Iterable[Sequence[int]]) -> "VoxelSet":
        arr = np.asarray(list(cells), dtype=np.int64).reshape(-1, 3)
        if arr.size and ((arr < 0).any() or (arr >= grid.resolution).any()):
            raise GeometryError("cell coordinate out of bounds")
        return cls(grid, grid.linear(arr[:, 0], arr[:, 1], arr[:, 2]))

    @classmethod
    def from_mask(cls, grid: GridSpec, mask: np.ndarray) -> "VoxelSet":
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != grid.shape:
            raise GeometryError(f"mask shape {mask.shape} does not match grid {grid.shape}")
        return cls(grid, np.flatnonzero(mask))

    @classmethod
    def empty(cls, grid: GridSpec) -> "VoxelSet":
        return cls(grid)

    @classmethod
    def full(cls, grid: GridSpec) -> "VoxelSet":
        return cls(grid, np.arange(grid.n_cells))

    @property
    def indices(self) -> np.ndarray:
        return self._idx

    @cached_property
    def cells(self) -> np.ndarray:
        return self.grid.coords(self._idx).reshape(-1, 3)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.grid.n_cells, dtype=bool)
        m[self._idx] = True
        return m.reshape(self.grid.shape)

    def __len__(self) -> int:
        return int(self._idx.size)

    def __bool__(self) -> bool:
        return self._idx.size > 0

    def __iter__(self) -> Iterator[tuple[int, int, int]]:
        for c in self.cells:
            yield (int(c[0]), int(c[1]), int(c[2]))

    def __contains__(self, cell) -> bool:
        if not self.grid.in_bounds(cell):
            return False
        i = int(self.grid.linear(*cell))
        j = np.searchsorted(self._idx, i)
        return j < self._idx.size and self._idx[j] == i

    def _check(self, other: "VoxelSet"):
        if self.grid != other.grid:
            raise GeometryError(f"grid mismatch: {self.grid} vs {other.grid}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, VoxelSet):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self._idx, other._idx)

    def __hash__(self) -> int:
        return hash((self.grid, self._idx.tobytes()))

    def __or__(self, other: "VoxelSet") -> "VoxelSet":
        self._check(other)
        return VoxelSet(self.grid, np.union1d(self._idx, other._idx))

    def __and__(self, other: "VoxelSet") -> "VoxelSet":
        self._check(other)
        return VoxelSet(self.grid, np.intersect1d(self._idx, other._idx, assume_unique=True))

    def __sub__(self, other: "VoxelSet") -> "VoxelSet":
        self._check(other)
        return VoxelSet(self.grid, np.setdiff1d(self._idx, other._idx, assume_unique=True))

    def isdisjoint(self, other: "VoxelSet") -> bool:
        self._check(other)
        return np.intersect1d(self._idx, other._idx, assume_unique=True).size == 0

    def issubset(self, other: "VoxelSet") -> bool:
        self._check(other)
        return bool(np.isin(self._idx, other._idx, assume_unique=True).all())

    def __le__(self, other: "VoxelSet") -> bool:
        return self.issubset(other)

    def __repr__(self) -> str:
        return f"VoxelSet(R={self.grid.resolution}, n={len(self)})"

    # serialisation

    def to_text(self) -> str:
        return "".join(f"{x},{y},{z}\n" for x, y, z in self)

    @classmethod
    def from_text(cls, grid: GridSpec, text: str) -> "VoxelSet":
        cells = []
        for line in text.splitlines():
            line = line.strip()
            if line:
                cells.append(tuple(int(v) for v in line.split(",")))
        return cls.from_cells(grid, cells)

    def to_bitmap(self) -> bytes:
        # mask[x, y, z] transposed so that x varies fastest in the flat order
        flat = self.mask().transpose(2, 1, 0).ravel()
        return np.packbits(flat, bitorder="little").tobytes()

    @classmethod
    def from_bitmap(cls, grid: GridSpec, data: bytes) -> "VoxelSet":
        n = grid.n_cells
        bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
        if bits.size < n:
            raise GeometryError(f"bitmap too short: {bits.size} bits for {n} cells")
        mask = bits[:n].astype(bool).reshape(grid.shape).transpose(2, 1, 0)
        return cls.from_mask(grid, mask)


# ---------------------------------------------------------------------------
# surface area


def _padded(mask: np.ndarray) -> np.ndarray:
    return np.pad(mask, 1, constant_values=False)


def neighbour_count(mask: np.ndarray, occupied: np.ndarray) -> np.ndarray:
    """Per cell, the number of face neighbours (out of 6) that lie in ``occupied``.

    Cells outside the grid are never occupied. Returned only where ``mask``.
    """
    p = _padded(occupied).astype(np.int8)
    n = (
        p[2:, 1:-1, 1:-1] + p[:-2, 1:-1, 1:-1]
        + p[1:-1, 2:, 1:-1] + p[1:-1, :-2, 1:-1]
        + p[1:-1, 1:-1, 2:] + p[1:-1, 1:-1, :-2]
    )
    return np.where(mask, n, 0)


def exposed_faces(critical: np.ndarray, blocked: np.ndarray) -> int:
    """Dense-mask core of :func:`exposed_surface_area`.

    Counts faces of ``critical`` cells whose neighbour is neither critical nor
    in ``blocked``; faces on the grid boundary count as exposed.
    """
    occupied = critical | blocked
    covered = neighbour_count(critical, occupied)
    return int(6 * np.count_nonzero(critical) - covered.sum())


def exposed_surface_area(critical: VoxelSet, erroneous_swept: VoxelSet) -> int:
    """Exposed surface (in voxel faces) of ``critical`` given the remaining swept set.

    A face is exposed when the cell across it is in neither set. Faces shared
    between two critical cells are interior, faces against ``erroneous_swept``
    stay guarded, and grid-boundary faces are exposed.
    """
    critical._check(erroneous_swept)
    if not critical:
        return 0
    if not critical.isdisjoint(erroneous_swept):
        raise GeometryError("critical space overlaps the erroneous swept space")
    return exposed_faces(critical.mask(), erroneous_swept.mask())


def surface_and_volume(cells: VoxelSet) -> tuple[int, int]:
    return exposed_surface_area(cells, VoxelSet.empty(cells.grid)), len(cells)


# ---------------------------------------------------------------------------
# boxes


@dataclass(frozen=True)
class BoxRegion:
    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def __post_init__(self):
        if any(l > h for l, h in zip(self.lo, self.hi)):
            raise GeometryError(f"box corners not ordered: {self.lo} > {self.hi}")

    @property
    def volume(self) -> int:
        return int(np.prod([h - l + 1 for l, h in zip(self.lo, self.hi)]))

    @property
    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(l, h + 1) for l, h in zip(self.lo, self.hi))

    def contains(self, cell) -> bool:
        return all(l <= c <= h for l, c, h in zip(self.lo, cell, self.hi))

    def to_voxels(self, grid: GridSpec) -> VoxelSet:
        m = np.zeros(grid.shape, dtype=bool)
        m[self.slices] = True
        return VoxelSet.from_mask(grid, m)


def box_cover(swept: VoxelSet) -> list[BoxRegion]:
    """Greedy cover of ``swept`` by axis-aligned boxes.

    Seeds at the lexicographically smallest uncovered cell, grows as far as
    possible along +x, then +y, then +z, keeping every cell inside ``swept``.
    Boxes may overlap.
    """
    if not swept:
        raise GeometryError("cannot box-cover an empty swept space")
    occ = swept.mask()
    covered = np.zeros_like(occ)
    r = swept.grid.resolution
    boxes = []
    for idx in swept.indices:
        x0, y0, z0 = np.unravel_index(idx, occ.shape)
        if covered[x0, y0, z0]:
            continue
        x1, y1, z1 = x0, y0, z0
        while x1 + 1 < r and occ[x1 + 1, y0, z0]:
            x1 += 1
        while y1 + 1 < r and occ[x0 : x1 + 1, y1 + 1, z0].all():
            y1 += 1
        while z1 + 1 < r and occ[x0 : x1 + 1, y0 : y1 + 1, z1 + 1].all():
            z1 += 1
        box = BoxRegion((int(x0), int(y0), int(z0)), (int(x1), int(y1), int(z1)))
        covered[box.slices] = True
        boxes.append(box)
    return boxes


# ---------------------------------------------------------------------------
# octree


class Occupancy(enum.IntEnum):
    EMPTY = 0
    PARTIAL = 1
    FULL = 2


def octant_offset(o: int) -> tuple[int, int, int]:
    """Morton octant number (z<<2 | y<<1 | x) -> unit offset."""
    return (o & 1, (o >> 1) & 1, (o >> 2) & 1)


@dataclass(frozen=True)
class OctreeNode:
    octant_status: tuple[int, ...]
    child_base: int = 0

    def __post_init__(self):
        if len(self.octant_status) != 8:
            raise GeometryError("an octree node has exactly 8 octants")

    @property
    def partial_octants(self) -> list[int]:
        return [o for o, s in enumerate(self.octant_status) if s == Occupancy.PARTIAL]


def _summed_volume(mask: np.ndarray) -> np.ndarray:
    s = np.zeros(tuple(n + 1 for n in mask.shape), dtype=np.int64)
    s[1:, 1:, 1:] = mask.astype(np.int64).cumsum(0).cumsum(1).cumsum(2)
    return s


def _block_sum(s: np.ndarray, lo, size: int) -> int:
    x0, y0, z0 = lo
    x1, y1, z1 = x0 + size, y0 + size, z0 + size
    return int(
        s[x1, y1, z1] - s[x0, y1, z1] - s[x1, y0, z1] - s[x1, y1, z0]
        + s[x0, y0, z1] + s[x0, y1, z0] + s[x1, y0, z0] - s[x0, y0, z0]
    )


def build_octree(swept: VoxelSet, depth: int) -> list[OctreeNode]:
    """Octree nodes of ``swept`` in breadth-first storage order.

    Only partially occupied octants get a child node; the children of one
    node are stored contiguously from ``child_base``.
    """
    grid = swept.grid
    if grid.resolution != 2**depth:
        raise GeometryError(f"grid resolution {grid.resolution} != 2**{depth}")
    sv = _summed_volume(swept.mask())
    nodes: list[OctreeNode] = []
    queue = [((0, 0, 0), grid.resolution)]
    next_free = 1
    head = 0
    while head < len(queue):
        origin, size = queue[head]
        head += 1
        half = size // 2
        status = []
        partial = []
        for o in range(8):
            off = octant_offset(o)
            lo = tuple(origin[a] + off[a] * half for a in range(3))
            n = _block_sum(sv, lo, half)
            if n == 0:
                status.append(Occupancy.EMPTY)
            elif n == half**3:
                status.append(Occupancy.FULL)
            else:
                status.append(Occupancy.PARTIAL)
                partial.append((lo, half))
        base = next_free if partial else 0
        next_free += len(partial)
        queue.extend(partial)
        nodes.append(OctreeNode(tuple(int(s) for s in status), base))
    return nodes


def decode_octree_mask(nodes: Sequence[OctreeNode], grid: GridSpec) -> np.ndarray:
    """Dense occupancy mask described by a node array.

    Child addresses wrap modulo the node count and a partial octant of
    single-voxel size decodes as empty, so any node array decodes.
    """
    out = np.zeros(grid.shape, dtype=bool)
    n_nodes = len(nodes)
    if not n_nodes:
        return out
    stack = [(0, (0, 0, 0), grid.resolution)]
    while stack:
        idx, origin, size = stack.pop()
        node = nodes[idx]
        half = size // 2
        rank = 0
        for o, s in enumerate(node.octant_status):
            off = octant_offset(o)
            lo = tuple(origin[a] + off[a] * half for a in range(3))
            if s >= Occupancy.FULL:
                out[lo[0] : lo[0] + half, lo[1] : lo[1] + half, lo[2] : lo[2] + half] = True
            elif s == Occupancy.PARTIAL:
                if half > 1:
                    stack.append(((node.child_base + rank) % n_nodes, lo, half))
                rank += 1
    return out


def decode_octree(nodes: Sequence[OctreeNode], grid: GridSpec) -> VoxelSet:
    return VoxelSet.from_mask(grid, decode_octree_mask(nodes, grid))
