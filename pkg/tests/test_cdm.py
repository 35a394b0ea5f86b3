import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cefsim.cdm import (
    BitImage,
    CapacityError,
    CdmKind,
    decode,
    detect_collisions,
    encode,
    flip_bit,
    flip_deltas,
    parse_octree,
    structure_bits,
)
from cefsim.geometry import GridSpec, Occupancy, VoxelSet

from conftest import random_blob

G8 = GridSpec(8, 80.0)
G16 = GridSpec(16, 160.0)
KINDS = list(CdmKind)


def blobs(grid):
    return st.integers(0, 2**32 - 1).map(lambda s: random_blob(grid, np.random.default_rng(s)))


@settings(max_examples=60, deadline=None)
@given(blobs(G8), st.sampled_from(KINDS))
def test_roundtrip(swept, kind):
    img = encode(kind, swept)
    assert decode(img) == swept
    w = structure_bits(kind, G8)
    assert [s.bit_length for s in img.directory] == [w] * img.n_structures
    assert [s.bit_offset for s in img.directory] == list(range(0, img.n_bits, w))


@settings(max_examples=25, deadline=None)
@given(blobs(G8), st.sampled_from(KINDS))
def test_flip_deltas_match_decode_diff(swept, kind):
    img = encode(kind, swept)
    base = decode(img).mask().ravel()
    d = flip_deltas(img)
    assert d.n_bits == img.n_bits
    for b in range(img.n_bits):
        m = decode(flip_bit(img, b)).mask().ravel()
        assert np.array_equal(np.sort(d.removed_of(b)), np.flatnonzero(base & ~m))
        assert np.array_equal(np.sort(d.added_of(b)), np.flatnonzero(m & ~base))


def test_empty_and_full_sets():
    for kind in KINDS:
        for s in (VoxelSet.empty(G8), VoxelSet.full(G8)):
            assert decode(encode(kind, s)) == s


def test_a1_field_packing():
    img = encode(CdmKind.A1, VoxelSet.from_cells(G16, [(1, 2, 3)]))
    assert img.n_bits == 12
    assert "".join(map(str, img.bits)) == "0001" "0010" "0011"


def test_a4_payload_and_bijection():
    g = GridSpec(32, 320.0)
    s = random_blob(g, np.random.default_rng(1))
    img = encode(CdmKind.A4, s)
    assert img.n_bits == 32768 and int(img.bits.sum()) == len(s)
    for b in np.random.default_rng(2).choice(img.n_bits, 20, replace=False):
        diff = decode(flip_bit(img, int(b))).mask() ^ s.mask()
        assert diff.sum() == 1


def test_a3_single_partial_octant_scene():
    g = GridSpec(4, 40.0)
    nodes = parse_octree(encode(CdmKind.A3, VoxelSet.from_cells(g, [(0, 0, 0)])).bits)
    assert len(nodes) == 2
    assert nodes[0].octant_status == (Occupancy.PARTIAL,) + (Occupancy.EMPTY,) * 7
    assert nodes[0].child_base == 1


def test_a3_partial_to_empty_drops_octant():
    m = np.zeros(G8.shape, bool)
    m[4:, 4:, 4:] = True
    m[0, 0, 0] = m[1, 0, 0] = True
    img = encode(CdmKind.A3, VoxelSet.from_mask(G8, m))
    # root octant 0 is partial (01); clearing its low bit makes it empty
    m[:4, :4, :4] = False
    assert decode(flip_bit(img, 1)) == VoxelSet.from_mask(G8, m)


def test_a3_leaf_full_to_partial_reads_empty():
    g = GridSpec(4, 40.0)
    img = encode(CdmKind.A3, VoxelSet.from_cells(g, [(0, 0, 0), (1, 1, 1)]))
    leaf = 24  # node 1 is the leaf level; octant 0 full (10) -> 11 stays full, -> 00 empty
    assert decode(flip_bit(img, leaf + 1)) == decode(img)
    assert decode(flip_bit(img, leaf)) == VoxelSet.from_cells(g, [(1, 1, 1)])


def test_a2_degenerate_box_decodes_empty():
    s = VoxelSet.from_cells(G8, [(2, 2, 2)])
    img = encode(CdmKind.A2, s)
    assert decode(flip_bit(img, 0)) == VoxelSet.empty(G8)  # lo.x MSB: 2 -> 6 > hi.x


def test_flip_is_involution_and_bounds():
    img = encode(CdmKind.A2, random_blob(G8, np.random.default_rng(4)))
    assert flip_bit(flip_bit(img, 5), 5) == img
    assert not np.array_equal(flip_bit(img, 5).bits, img.bits)
    with pytest.raises(IndexError):
        flip_bit(img, img.n_bits)


def test_detect_collisions():
    rng = np.random.default_rng(5)
    s = random_blob(G8, rng)
    img = encode(CdmKind.A3, s)
    assert detect_collisions(img, s).all()
    assert not detect_collisions(img, VoxelSet.full(G8) - s).any()
    for _ in range(200):
        bad = flip_bit(img, int(rng.integers(img.n_bits)))
        q = VoxelSet(G8, rng.choice(G8.n_cells, 30, replace=False))
        assert np.array_equal(detect_collisions(bad, q), decode(bad).mask().ravel()[q.indices])
    with pytest.raises(ValueError):
        detect_collisions(img, VoxelSet.empty(G16))


def test_capacity_errors():
    s = VoxelSet.from_mask(G16, np.indices(G16.shape).sum(0) % 2 == 0)
    with pytest.raises(CapacityError) as e:
        encode(CdmKind.A3, s)
    assert e.value.required > 256
    with pytest.raises(CapacityError):
        encode(CdmKind.A1, s, capacity=10)


def test_dump_load_roundtrip():
    for kind in KINDS:
        img = encode(kind, random_blob(G8, np.random.default_rng(6)), motion_id=3)
        back = BitImage.load(img.dump())
        assert back == img and back.motion_id == 3 and back.directory == img.directory
