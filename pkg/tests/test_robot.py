import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from cefsim.geometry import GridSpec
from cefsim.robot import (
    ArmSpec,
    MotionSet,
    MotionSetError,
    Pose,
    forward_kinematics,
    generate_motion_set,
    swept_volume,
)

from conftest import DESK_ARM

GRID = GridSpec(16, 84.0)


def fk_oracle(arm, angles, base):
    # intrinsic rotations composed with scipy; joint i turns about z (even) or y (odd)
    pts = [np.asarray(base, float)]
    rot = Rotation.identity()
    for i, (length, th) in enumerate(zip(arm.link_lengths, angles)):
        rot = rot * Rotation.from_rotvec(th * np.array([0, 0, 1.0] if i % 2 == 0 else [0, 1.0, 0]))
        pts.append(pts[-1] + rot.apply([length, 0, 0]))
    return np.array(pts)


def test_zero_pose_is_collinear_along_x():
    segs = forward_kinematics(DESK_ARM, Pose((0.0,) * 4), base=(0, 0, 0))
    assert np.allclose(segs[-1, 1], [42, 0, 0])
    assert np.allclose(segs[:, :, 1:], 0)


def test_two_dof_quarter_turn():
    arm = ArmSpec((10.0, 5.0), 1.0)
    segs = forward_kinematics(arm, Pose((math.pi / 2, 0.0)), base=(0, 0, 0))
    assert np.allclose(segs[0, 1], [0, 10, 0])
    assert np.allclose(segs[1, 1], [0, 15, 0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-math.pi, math.pi), min_size=4, max_size=4))
def test_fk_matches_rotation_oracle(angles):
    segs = forward_kinematics(DESK_ARM, Pose(tuple(angles)), base=(42, 42, 42))
    pts = np.vstack([segs[0, 0], segs[:, 1]])
    assert np.abs(pts - fk_oracle(DESK_ARM, angles, (42, 42, 42))).max() < 1e-9


def test_arm_validation():
    with pytest.raises(MotionSetError):
        ArmSpec((), 1.0)
    with pytest.raises(MotionSetError):
        ArmSpec((1.0,) * 8, 1.0)
    with pytest.raises(MotionSetError):
        ArmSpec((10.0,), -1.0)
    with pytest.raises(MotionSetError):
        ArmSpec((30.0, 30.0), 1.0).check_fits(GRID)


def test_swept_volume_properties():
    rng = np.random.default_rng(3)
    for _ in range(5):
        a, b = (Pose(tuple(rng.uniform(-1, 1, 4))) for _ in range(2))
        ab = swept_volume(DESK_ARM, a, b, GRID)
        assert ab == swept_volume(DESK_ARM, b, a, GRID)
        assert swept_volume(DESK_ARM, a, a, GRID).issubset(ab)
        assert ab.issubset(swept_volume(DESK_ARM, a, b, GRID, steps=2 * 40))
        assert swept_volume(DESK_ARM, a, b, GRID, steps=20).issubset(swept_volume(DESK_ARM, a, b, GRID, steps=39))
        centres = GRID.centers()[ab.indices]
        assert np.linalg.norm(centres - 42.0, axis=1).max() <= DESK_ARM.reach + DESK_ARM.link_radius + 1e-9


def test_single_pose_rasterisation():
    p = Pose((0.0,) * 4)
    assert swept_volume(DESK_ARM, p, p, GRID) == swept_volume(DESK_ARM, p, p, GRID, steps=2)


def test_quarter_turn_matches_analytic_volume():
    L, r = 40.0, 4.0
    arm = ArmSpec((L,), r)
    grid = GridSpec(64, 90.0)
    s = swept_volume(arm, Pose((0.0,)), Pose((math.pi / 2,)), grid)
    # Steiner formula: quarter disc dilated by a ball of radius r
    area = math.pi * L**2 / 4
    perimeter = 2 * L + math.pi * L / 2
    volume = area * 2 * r + perimeter * math.pi * r**2 / 2 + 4 / 3 * math.pi * r**3
    assert abs(len(s) * grid.voxel_size**3 / volume - 1) < 0.10


def test_motion_set_contracts(tmp_path):
    ms = generate_motion_set(DESK_ARM, GRID, 2, 1, seed=1)
    assert [(m.from_id, m.to_id) for m in ms.motions] == [(0, 1)]
    with pytest.raises(MotionSetError):
        generate_motion_set(DESK_ARM, GRID, 4, 7, seed=1)
    a = generate_motion_set(DESK_ARM, GRID, 64, 128, seed=5)
    b = generate_motion_set(DESK_ARM, GRID, 64, 128, seed=5)
    assert a.to_json() == b.to_json()
    assert [m.id for m in a.motions] == list(range(128))
    assert all(len(m.swept) > 0 for m in a.motions)
    back = MotionSet.load(a.save(tmp_path / "ms.json"))
    assert back.to_json() == a.to_json()


def test_roadmap_statistics():
    ms = generate_motion_set(DESK_ARM, GRID, 512, 1024, seed=11)
    deg = np.zeros(512, int)
    lengths = []
    poses = np.array([p.joint_angles for p in ms.poses])
    for m in ms.motions:
        deg[m.from_id] += 1
        deg[m.to_id] += 1
        lengths.append(np.linalg.norm(poses[m.from_id] - poses[m.to_id]))
    assert deg.min() >= 1
    rng = np.random.default_rng(0)
    i, j = rng.integers(0, 512, (2, 5000))
    rand = np.linalg.norm(poses[i] - poses[j], axis=1)
    assert np.mean(lengths) < np.percentile(rand, 90)
