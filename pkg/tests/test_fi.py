import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cefsim.cdm import CdmKind
from cefsim.environments import generate_scenarios
from cefsim.fi import (
    FIError,
    SdccOutcome,
    cef_aware_run_bound,
    classify_sdcc,
    exhaustive_fi,
    exhaustive_run_count,
    load_exhaustive,
    load_phase1,
    phase2_sdcc,
    run_phase1,
    sample_size,
    save_exhaustive,
    save_phase1,
    table_from_dict,
    table_to_dict,
    uniform_statistical_fi,
)
from cefsim.geometry import GridSpec, VoxelSet, exposed_surface_area
from cefsim.robot import motion_set_from_swept

G = GridSpec(8, 80.0)


def vs(*cells):
    return VoxelSet.from_cells(G, cells)


def test_classify_examples():
    free = vs((0, 0, 0), (1, 0, 0))
    err = vs((0, 0, 0))
    assert classify_sdcc(free, err, vs((5, 5, 5))) is SdccOutcome.BENIGN
    assert classify_sdcc(free, err, vs((1, 0, 0))) is SdccOutcome.SDCC
    assert classify_sdcc(free, free, vs((1, 0, 0))) is SdccOutcome.MASKED
    assert classify_sdcc(err, free, vs((1, 0, 0))) is SdccOutcome.FALSE_POSITIVE_ONLY
    assert classify_sdcc(free, err, vs((0, 0, 0), (1, 0, 0))) is SdccOutcome.BENIGN
    with pytest.raises(ValueError):
        classify_sdcc(free, err, VoxelSet.empty(GridSpec(4, 40.0)))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_classify_definition(seed):
    rng = np.random.default_rng(seed)
    a, b, o = (VoxelSet(G, rng.choice(G.n_cells, rng.integers(0, 40), replace=False)) for _ in range(3))
    out = classify_sdcc(a, b, o)
    assert (out is SdccOutcome.SDCC) == (not a.isdisjoint(o) and b.isdisjoint(o))
    if a == b:
        assert out is SdccOutcome.MASKED


def test_sample_size_examples():
    assert sample_size(0.5, None) == 1537
    assert sample_size(0.5, float("inf")) == 1537
    assert sample_size(0.5, None, margin=10.0) == 1
    assert sample_size(0.5, 10) <= 10
    assert sample_size(0.5, 1e12) == 1537
    for bad in (0.0, 1.0):
        with pytest.raises(ValueError):
            sample_size(bad, None)
    with pytest.raises(ValueError):
        sample_size(0.5, None, margin=0)


def test_report_invariants(oracle_phase1):
    for kind, (report, cache) in oracle_phase1.items():
        sizes = report.critical_sizes()
        assert np.array_equal(report.cef == 0, sizes == 0)
        for b in np.random.default_rng(0).choice(report.n_bits, 50, replace=False):
            assert report.cef[b] == exposed_surface_area(report.critical(b), cache.erroneous(report, b))


def test_a4_critical_space_is_one_voxel(oracle_phase1):
    report, cache = oracle_phase1[CdmKind.A4]
    sizes = report.critical_sizes()
    assert set(np.unique(sizes)) <= {0, 1}
    assert sizes.sum() == cache.swept_cells.size


def test_fast_engine_matches_literal_algorithm(oracle_motions, oracle_phase1):
    for kind in (CdmKind.A1, CdmKind.A2, CdmKind.A4):
        slow, _ = run_phase1(oracle_motions, kind, engine="simulate")
        fast, _ = oracle_phase1[kind]
        assert np.array_equal(slow.cef, fast.cef)
        assert np.array_equal(slow.crit_ptr, fast.crit_ptr)
        assert np.array_equal(slow.crit_cells, fast.crit_cells)


def test_parallel_phase1_identical(oracle_motions, oracle_phase1):
    report, cache = run_phase1(oracle_motions, CdmKind.A3, jobs=2)
    ref, rcache = oracle_phase1[CdmKind.A3]
    assert np.array_equal(report.cef, ref.cef) and np.array_equal(report.crit_cells, ref.crit_cells)
    assert np.array_equal(cache.add_cells, rcache.add_cells)


def test_phase2_all_zero_cef():
    # single voxels in A4 flipped off expose faces, so use an empty motion to force all-zero CEF
    ms = motion_set_from_swept(G, [VoxelSet.empty(G)])
    report, cache = run_phase1(ms, CdmKind.A4)
    assert report.n_bits == 512 and not report.cef.any()
    obs = generate_scenarios("D4", 20, G, seed=1).obstacle_matrix()
    table = phase2_sdcc(report, cache, obs, M=40, seed=1)
    assert table.overall == 0.0
    assert all(g.trials == 0 for g in table.groups)
    assert table.budget.run_counter == report.n_bits


def test_phase2_bookkeeping(oracle_phase1, oracle_obstacles):
    for kind, (report, cache) in oracle_phase1.items():
        table = phase2_sdcc(report, cache, oracle_obstacles, M=8, seed=3)
        assert table.overall == pytest.approx(table.recompute_overall())
        assert sum(g.n_bits for g in table.groups) == report.n_bits
        assert all(0 <= g.p_hat <= 1 and g.sampled_bits <= min(8, g.n_bits) for g in table.groups)
        assert table.budget.run_counter <= cef_aware_run_bound(table)
        again = phase2_sdcc(report, cache, oracle_obstacles, M=8, seed=3)
        assert table_to_dict(again) == table_to_dict(table)
        assert table_to_dict(table_from_dict(table_to_dict(table))) == table_to_dict(table)
    with pytest.raises(FIError):
        phase2_sdcc(report, cache, oracle_obstacles[:0], M=8, seed=3)
    with pytest.raises(FIError):
        phase2_sdcc(report, cache, oracle_obstacles, M=0, seed=3)


def test_phase2_auto_m(oracle_phase1, oracle_obstacles):
    report, cache = oracle_phase1[CdmKind.A2]
    table = phase2_sdcc(report, cache, oracle_obstacles, M="auto", seed=3)
    assert 1 <= table.budget.M <= 1537


def test_exhaustive_contracts(oracle_phase1, oracle_obstacles, tmp_path):
    report, cache = oracle_phase1[CdmKind.A2]
    res = exhaustive_fi(report, cache, oracle_obstacles)
    assert res.budget.run_counter == exhaustive_run_count(report, 500) == report.n_bits * 500
    assert not res.per_bit[report.cef == 0].any()
    assert res.overall == pytest.approx(res.per_bit.mean())
    back = load_exhaustive(save_exhaustive(tmp_path / "x.bin", res))
    assert np.array_equal(back.sdcc_counts, res.sdcc_counts) and back.overall == res.overall
    with pytest.raises(FIError):
        exhaustive_fi(report, cache, oracle_obstacles, max_runs=10)


def test_uniform_modes(oracle_phase1, oracle_obstacles):
    report, cache = oracle_phase1[CdmKind.A1]
    empty = np.zeros_like(oracle_obstacles[:50])
    assert uniform_statistical_fi(report, cache, empty, 2000, seed=1).estimate == 0.0
    sub = oracle_obstacles[:20]
    full = report.n_bits * 20
    u = uniform_statistical_fi(report, cache, sub, full, seed=2, replace=False)
    assert u.estimate == pytest.approx(exhaustive_fi(report, cache, sub).overall, abs=1e-15)
    assert u.ci_low <= u.estimate <= u.ci_high
    with pytest.raises(FIError):
        uniform_statistical_fi(report, cache, sub, full + 1, seed=2, replace=False)


def test_phase1_save_load(oracle_phase1, tmp_path):
    report, cache = oracle_phase1[CdmKind.A3]
    r2, c2, meta = load_phase1(save_phase1(tmp_path / "a3.bin", report, cache, {"x": 1}))
    assert meta == {"x": 1} and r2.kind is report.kind
    for a, b in [(r2.cef, report.cef), (r2.crit_cells, report.crit_cells), (c2.add_ptr, cache.add_ptr)]:
        assert np.array_equal(a, b)
