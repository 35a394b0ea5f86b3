"""Bit-accurate storage models of the four collision-detection modules.

Layouts (all fields MSB first, ``w = log2(resolution)``):

* ``A1_voxel``: one structure per swept voxel, ``x | y | z`` (3w bits).
* ``A2_box``: one structure per greedy box, ``lo.x | lo.y | lo.z | hi.x | hi.y | hi.z``
  (6w bits). A box with ``lo > hi`` on any axis decodes to nothing.
* ``A3_octree``: one 24-bit word per node in breadth-first order: eight 2-bit
  octant codes (octant 0 first; 00 empty, 01 partial, 10 full, 11 read as full)
  followed by an 8-bit ``child_base``. Child addresses wrap modulo the node
  count; a partial code at single-voxel octant size reads as empty.
* ``A4_flat_octree``: one occupancy bit per cell in Morton order
  (``... z1 y1 x1 z0 y0 x0``), grouped in 64-bit words.

Bit dump format (``BitImage.dump``)::

    b"CEFBIMG1" | u32 little-endian header length | JSON header | payload

The header holds ``kind``, ``motion_id``, ``grid``, ``n_bits`` and
``directory`` (``[structure_id, role, bit_offset, bit_length]`` rows). The
payload is the bit vector packed 8 per byte, bit 0 in the MSB of byte 0.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import (
    GridSpec,
    Occupancy,
    OctreeNode,
    VoxelSet,
    box_cover,
    build_octree,
    decode_octree_mask,
    octant_offset,
)

A3_NODE_BITS = 24
A3_ADDR_BITS = 8
A4_WORD_BITS = 64
DUMP_MAGIC = b"CEFBIMG1"


class CdmKind(str, enum.Enum):
    A1 = "A1_voxel"
    A2 = "A2_box"
    A3 = "A3_octree"
    A4 = "A4_flat_octree"

    @classmethod
    def parse(cls, value) -> "CdmKind":
        if isinstance(value, cls):
            return value
        for k in cls:
            if value in (k.value, k.name):
                return k
        raise ValueError(f"unknown CDM kind {value!r}; choose from {[k.value for k in cls]}")


ROLE = {CdmKind.A1: "voxel", CdmKind.A2: "box", CdmKind.A3: "octree_node", CdmKind.A4: "flat_word"}


class CapacityError(ValueError):
    def __init__(self, kind, required: int, available: int):
        super().__init__(f"{kind.value}: swept space needs {required} structures, capacity is {available}")
        self.required = required
        self.available = available


def structure_bits(kind: CdmKind, grid: GridSpec) -> int:
    w = grid.depth
    return {CdmKind.A1: 3 * w, CdmKind.A2: 6 * w, CdmKind.A3: A3_NODE_BITS, CdmKind.A4: A4_WORD_BITS}[kind]


@dataclass(frozen=True)
class StructureSpan:
    structure_id: int
    role: str
    bit_offset: int
    bit_length: int


@dataclass(frozen=True, eq=False)
class BitImage:
    kind: CdmKind
    motion_id: int
    grid: GridSpec
    bits: np.ndarray
    directory: tuple[StructureSpan, ...]

    def __post_init__(self):
        b = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if b.flags.writeable:
            b = b.copy()
            b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def n_bits(self) -> int:
        return int(self.bits.size)

    @property
    def width(self) -> int:
        return structure_bits(self.kind, self.grid)

    @property
    def n_structures(self) -> int:
        return len(self.directory)

    def fields(self) -> np.ndarray:
        """Bits reshaped to (structures, width)."""
        return self.bits[: self.n_structures * self.width].reshape(self.n_structures, self.width)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitImage):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.motion_id == other.motion_id
            and self.grid == other.grid
            and self.directory == other.directory
            and np.array_equal(self.bits, other.bits)
        )

    def structure_of(self, bit_index: int) -> StructureSpan:
        return self.directory[bit_index // self.width]

    def dump(self) -> bytes:
        header = {
            "kind": self.kind.value,
            "motion_id": int(self.motion_id),
            "grid": self.grid.to_dict(),
            "n_bits": self.n_bits,
            "directory": [[s.structure_id, s.role, s.bit_offset, s.bit_length] for s in self.directory],
        }
        h = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        payload = np.packbits(self.bits, bitorder="big").tobytes()
        return DUMP_MAGIC + struct.pack("<I", len(h)) + h + payload

    @classmethod
    def load(cls, data: bytes) -> "BitImage":
        if data[:8] != DUMP_MAGIC:
            raise ValueError("not a BitImage dump")
        (n,) = struct.unpack("<I", data[8:12])
        header = json.loads(data[12 : 12 + n])
        bits = np.unpackbits(np.frombuffer(data[12 + n :], dtype=np.uint8), bitorder="big")
        directory = tuple(StructureSpan(int(a), r, int(o), int(l)) for a, r, o, l in header["directory"])
        return cls(
            CdmKind(header["kind"]),
            header["motion_id"],
            GridSpec.from_dict(header["grid"]),
            bits[: header["n_bits"]],
            directory,
        )


# ---------------------------------------------------------------------------
# field packing


def to_bits(values: np.ndarray, width: int) -> np.ndarray:
    """Integers (..., k) -> MSB-first bits (..., k * width)."""
    values = np.asarray(values, dtype=np.int64)
    shifts = np.arange(width - 1, -1, -1)
    bits = (values[..., None] >> shifts) & 1
    return bits.reshape(*values.shape[:-1], values.shape[-1] * width).astype(np.uint8)


def from_bits(bits: np.ndarray, width: int) -> np.ndarray:
    """MSB-first bits (..., k * width) -> integers (..., k)."""
    bits = np.asarray(bits, dtype=np.int64)
    b = bits.reshape(*bits.shape[:-1], bits.shape[-1] // width, width)
    weights = 1 << np.arange(width - 1, -1, -1)
    return (b * weights).sum(axis=-1)


def morton_codes(grid: GridSpec) -> np.ndarray:
    """Morton code of every cell, indexed by linear (lexicographic) cell index."""
    c = grid.coords(np.arange(grid.n_cells))
    code = np.zeros(grid.n_cells, dtype=np.int64)
    for b in range(grid.depth):
        for axis in range(3):
            code |= ((c[:, axis] >> b) & 1) << (3 * b + axis)
    return code


_MORTON_CACHE: dict = {}


def morton_to_linear(grid: GridSpec) -> np.ndarray:
    """Linear cell index of each Morton code."""
    key = grid.resolution
    if key not in _MORTON_CACHE:
        code = morton_codes(grid)
        inv = np.empty_like(code)
        inv[code] = np.arange(code.size)
        inv.setflags(write=False)
        _MORTON_CACHE[key] = inv
    return _MORTON_CACHE[key]


def _directory(kind: CdmKind, n: int, width: int) -> tuple[StructureSpan, ...]:
    role = ROLE[kind]
    return tuple(StructureSpan(i, role, i * width, width) for i in range(n))


def _octree_bits(nodes: Sequence[OctreeNode]) -> np.ndarray:
    status = np.array([n.octant_status for n in nodes], dtype=np.int64).reshape(-1, 8)
    base = np.array([[n.child_base] for n in nodes], dtype=np.int64).reshape(-1, 1)
    return np.concatenate([to_bits(status, 2), to_bits(base, A3_ADDR_BITS)], axis=1)


def parse_octree(bits: np.ndarray) -> list[OctreeNode]:
    f = np.asarray(bits).reshape(-1, A3_NODE_BITS)
    status = from_bits(f[:, :16], 2)
    base = from_bits(f[:, 16:], A3_ADDR_BITS)[:, 0]
    return [OctreeNode(tuple(int(s) for s in st), int(b)) for st, b in zip(status, base)]


def parse_boxes(image: BitImage) -> np.ndarray:
    return from_bits(image.fields(), image.grid.depth)


# ---------------------------------------------------------------------------
# encode / decode


def encode(kind, swept: VoxelSet, motion_id: int = 0, capacity: int | None = None) -> BitImage:
    kind = CdmKind.parse(kind)
    grid = swept.grid
    w = grid.depth
    width = structure_bits(kind, grid)
    if kind is CdmKind.A1:
        fields = to_bits(swept.cells, w)
    elif kind is CdmKind.A2:
        boxes = box_cover(swept) if swept else []
        corners = np.array([b.lo + b.hi for b in boxes], dtype=np.int64).reshape(-1, 6)
        fields = to_bits(corners, w)
    elif kind is CdmKind.A3:
        nodes = build_octree(swept, w)
        limit = 1 << A3_ADDR_BITS
        if len(nodes) > limit:
            raise CapacityError(kind, len(nodes), limit)
        fields = _octree_bits(nodes)
    else:
        if grid.n_cells % A4_WORD_BITS:
            raise ValueError("A4 needs at least 64 cells (resolution >= 4)")
        occ = np.zeros(grid.n_cells, dtype=np.uint8)
        occ[morton_codes(grid)[swept.indices]] = 1
        fields = occ.reshape(-1, A4_WORD_BITS)
    n = fields.shape[0]
    if capacity is not None and n > capacity:
        raise CapacityError(kind, n, capacity)
    return BitImage(kind, motion_id, grid, fields.reshape(-1), _directory(kind, n, width))


def decode_mask(image: BitImage) -> np.ndarray:
    """Flat (lexicographic) occupancy of whatever the stored bits describe."""
    grid = image.grid
    kind = image.kind
    out = np.zeros(grid.n_cells, dtype=bool)
    if image.n_structures == 0:
        return out
    if kind is CdmKind.A1:
        c = from_bits(image.fields(), grid.depth)
        out[grid.linear(c[:, 0], c[:, 1], c[:, 2])] = True
    elif kind is CdmKind.A2:
        m = out.reshape(grid.shape)
        for lx, ly, lz, hx, hy, hz in parse_boxes(image):
            if lx <= hx and ly <= hy and lz <= hz:
                m[lx : hx + 1, ly : hy + 1, lz : hz + 1] = True
    elif kind is CdmKind.A3:
        out = decode_octree_mask(parse_octree(image.bits), grid).ravel()
    else:
        out[morton_to_linear(grid)[np.flatnonzero(image.bits)]] = True
    return out


def decode(image: BitImage) -> VoxelSet:
    return VoxelSet(image.grid, np.flatnonzero(decode_mask(image)))


def flip_bit(image: BitImage, bit_index: int) -> BitImage:
    if not 0 <= bit_index < image.n_bits:
        raise IndexError(f"bit {bit_index} outside image of {image.n_bits} bits")
    bits = image.bits.copy()
    bits[bit_index] ^= 1
    return BitImage(image.kind, image.motion_id, image.grid, bits, image.directory)


def detect_collisions(image: BitImage, query: VoxelSet) -> np.ndarray:
    """Per query voxel (canonical order): does the stored swept space contain it?"""
    if query.grid != image.grid:
        raise ValueError(f"grid mismatch: image {image.grid} vs query {query.grid}")
    return decode_mask(image)[query.indices]


# ---------------------------------------------------------------------------
# per-bit flip deltas (fast path)


@dataclass
class FlipDeltas:
    """For every bit of an uncorrupted image: cells lost and cells gained on flipping it.

    ``removed`` and ``added`` are CSR pairs ``(indptr, cells)`` over bit indices;
    cells are linear indices. ``removed`` is always a subset of the decoded
    swept space and ``added`` is always disjoint from it.
    """

    removed_ptr: np.ndarray
    removed: np.ndarray
    added_ptr: np.ndarray
    added: np.ndarray

    @property
    def n_bits(self) -> int:
        return self.removed_ptr.size - 1

    def removed_of(self, b: int) -> np.ndarray:
        return self.removed[self.removed_ptr[b] : self.removed_ptr[b + 1]]

    def added_of(self, b: int) -> np.ndarray:
        return self.added[self.added_ptr[b] : self.added_ptr[b + 1]]


def _csr(chunks: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lens = np.fromiter((c.size for c in chunks), dtype=np.int64, count=len(chunks))
    ptr = np.zeros(len(chunks) + 1, dtype=np.int64)
    np.cumsum(lens, out=ptr[1:])
    cells = np.concatenate(chunks).astype(np.int64) if chunks else np.zeros(0, np.int64)
    return ptr, cells


def _singletons(values: np.ndarray, present: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """CSR with one entry ``values[i]`` where ``present[i]``, else nothing."""
    ptr = np.zeros(values.size + 1, dtype=np.int64)
    np.cumsum(present, out=ptr[1:])
    return ptr, values[present].astype(np.int64)


def flip_deltas(image: BitImage, swept_mask: np.ndarray | None = None) -> FlipDeltas:
    """Effect of every single-bit flip on the decoded swept space.

    Computes the same sets as ``decode(flip_bit(image, b))`` compared against
    ``decode(image)``, without decoding whole images per bit.
    """
    if swept_mask is None:
        swept_mask = decode_mask(image)
    fn = {CdmKind.A1: _deltas_a1, CdmKind.A2: _deltas_a2, CdmKind.A3: _deltas_a3, CdmKind.A4: _deltas_a4}
    return fn[image.kind](image, swept_mask)


def _deltas_a1(image: BitImage, swept: np.ndarray) -> FlipDeltas:
    grid = image.grid
    w = grid.depth
    n = image.n_structures
    c = from_bits(image.fields(), w)  # (n, 3)
    width = 3 * w
    axis = np.arange(width) // w
    mask = 1 << (w - 1 - np.arange(width) % w)
    flipped = np.repeat(c[:, None, :], width, axis=1)  # (n, width, 3)
    flipped[:, np.arange(width), axis] ^= mask
    orig = np.repeat(grid.linear(c[:, 0], c[:, 1], c[:, 2]), width)
    new = grid.linear(flipped[..., 0], flipped[..., 1], flipped[..., 2]).ravel()
    # voxel structures are unique, so the stored voxel always disappears
    rptr = np.arange(n * width + 1, dtype=np.int64)
    aptr, added = _singletons(new, ~swept[new])
    return FlipDeltas(rptr, orig.astype(np.int64), aptr, added)


def _deltas_a4(image: BitImage, swept: np.ndarray) -> FlipDeltas:
    lin = morton_to_linear(image.grid)[: image.n_bits]
    inside = swept[lin]
    rptr, removed = _singletons(lin, inside)
    aptr, added = _singletons(lin, ~inside)
    return FlipDeltas(rptr, removed, aptr, added)


def _deltas_a2(image: BitImage, swept: np.ndarray) -> FlipDeltas:
    grid = image.grid
    w = grid.depth
    boxes = parse_boxes(image)
    count = np.zeros(grid.shape, dtype=np.int32)
    for lx, ly, lz, hx, hy, hz in boxes:
        count[lx : hx + 1, ly : hy + 1, lz : hz + 1] += 1
    r = grid.resolution
    empty = np.zeros(0, dtype=np.int64)
    removed, added = [], []
    for box in boxes:
        lo, hi = box[:3], box[3:]
        for k in range(6 * w):
            f, pos = divmod(k, w)
            nb = box.copy()
            nb[f] ^= 1 << (w - 1 - pos)
            nlo, nhi = nb[:3], nb[3:]
            valid = bool(np.all(nlo <= nhi))
            grows = valid and np.all(nlo <= lo) and np.all(nhi >= hi)
            shrinks = (not valid) or (np.all(nlo >= lo) and np.all(nhi <= hi))
            if grows:
                removed.append(empty)
            else:
                sub = count[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1] == 1
                if valid:
                    a0 = np.maximum(lo, nlo) - lo
                    a1 = np.minimum(hi, nhi) - lo + 1
                    if np.all(a1 > a0):
                        sub = sub.copy()
                        sub[a0[0] : a1[0], a0[1] : a1[1], a0[2] : a1[2]] = False
                x, y, z = np.nonzero(sub)
                removed.append(((x + lo[0]) * r + y + lo[1]) * r + z + lo[2])
            if shrinks:
                added.append(empty)
            else:
                sub = count[nlo[0] : nhi[0] + 1, nlo[1] : nhi[1] + 1, nlo[2] : nhi[2] + 1] == 0
                x, y, z = np.nonzero(sub)
                added.append(((x + nlo[0]) * r + y + nlo[1]) * r + z + nlo[2])
    rptr, rcells = _csr(removed)
    aptr, acells = _csr(added)
    return FlipDeltas(rptr, rcells, aptr, acells)


class _OctreeFaults:
    """Re-decodes one node's cube with a single corrupted field, reusing clean subtrees."""

    def __init__(self, nodes: list[OctreeNode], grid: GridSpec):
        self.nodes = nodes
        self.grid = grid
        self.n = len(nodes)
        self.memo: dict = {}
        # placement of each node in the clean tree
        self.origin = [None] * self.n
        self.level = [0] * self.n
        self.parent = [-1] * self.n
        self.origin[0] = (0, 0, 0)
        for i, node in enumerate(nodes):
            if self.origin[i] is None:
                continue  # unreachable in a clean tree
            half = (grid.resolution >> self.level[i]) // 2
            for rank, o in enumerate(node.partial_octants):
                if half <= 1:
                    break
                c = (node.child_base + rank) % self.n
                off = octant_offset(o)
                self.origin[c] = tuple(self.origin[i][a] + off[a] * half for a in range(3))
                self.level[c] = self.level[i] + 1
                self.parent[c] = i

    def ancestors(self, i: int) -> set:
        out = set()
        while i >= 0:
            out.add(i)
            i = self.parent[i]
        return out

    def cube(self, status, base, level, resolve) -> np.ndarray:
        size = self.grid.resolution >> level
        half = size // 2
        out = np.zeros((size, size, size), dtype=bool)
        rank = 0
        for o, s in enumerate(status):
            if s == Occupancy.EMPTY:
                continue
            x, y, z = (v * half for v in octant_offset(o))
            if s >= Occupancy.FULL:
                out[x : x + half, y : y + half, z : z + half] = True
            else:
                if half > 1:
                    out[x : x + half, y : y + half, z : z + half] = resolve((base + rank) % self.n, level + 1)
                rank += 1
        return out

    def clean(self, idx: int, level: int) -> np.ndarray:
        key = (idx, level)
        m = self.memo.get(key)
        if m is None:
            node = self.nodes[idx]
            m = self.cube(node.octant_status, node.child_base, level, self.clean)
            self.memo[key] = m
        return m

    def faulty(self, target: int, status, base) -> np.ndarray:
        tainted = self.ancestors(target)

        def resolve(idx, level):
            if idx == target:
                return self.cube(status, base, level, resolve)
            if idx in tainted:
                node = self.nodes[idx]
                return self.cube(node.octant_status, node.child_base, level, resolve)
            return self.clean(idx, level)

        return self.cube(status, base, self.level[target], resolve)


def _deltas_a3(image: BitImage, swept: np.ndarray) -> FlipDeltas:
    grid = image.grid
    nodes = parse_octree(image.bits)
    tree = _OctreeFaults(nodes, grid)
    full = swept.reshape(grid.shape)
    r = grid.resolution
    empty = np.zeros(0, dtype=np.int64)
    removed, added = [], []
    for i, node in enumerate(nodes):
        if tree.origin[i] is None:
            removed.extend([empty] * A3_NODE_BITS)
            added.extend([empty] * A3_NODE_BITS)
            continue
        size = r >> tree.level[i]
        ox, oy, oz = tree.origin[i]
        old = full[ox : ox + size, oy : oy + size, oz : oz + size]
        for k in range(A3_NODE_BITS):
            status = list(node.octant_status)
            base = node.child_base
            if k < 16:
                o, hi_bit = divmod(k, 2)
                status[o] ^= 2 if hi_bit == 0 else 1
            else:
                base ^= 1 << (A3_NODE_BITS - 1 - k)
            if status == list(node.octant_status) and base == node.child_base:
                removed.append(empty)
                added.append(empty)
                continue
            new = tree.faulty(i, status, base)
            for sel, acc in ((old & ~new, removed), (new & ~old, added)):
                x, y, z = np.nonzero(sel)
                acc.append(((x + ox) * r + y + oy) * r + z + oz)
    rptr, rcells = _csr(removed)
    aptr, acells = _csr(added)
    return FlipDeltas(rptr, rcells, aptr, acells)
