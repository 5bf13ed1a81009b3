import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import householder_limb_angle
from symmcal.geometry import (
    AngleProfile, DegenerateGirdleError, angle_class_of, angle_classes, angle_profile, assess,
    limb_angle, mirror_normal, reflect_vector,
)
from symmcal.skeleton import JOINTS, LIMBS, Keypoint, Skeleton
from symmcal.synthetic import _random_rotation, make_skeleton


def skeleton_from(positions: dict, dim=None, hidden=()):
    dim = dim or len(next(iter(positions.values())))
    kps = {}
    for name in JOINTS:
        if name in positions and name not in hidden:
            kps[name] = Keypoint(name, positions[name])
        else:
            kps[name] = Keypoint.missing(name, dim)
    return Skeleton("t", dim, kps)


def random_skeleton(rng, dim):
    return skeleton_from({n: rng.normal(size=dim) for n in JOINTS}, dim)


def mirror_pose(rng, dim=3):
    """Right joints are the reflection of left joints through x = 0."""
    pos = {}
    for kind in ("shoulder", "elbow", "wrist", "hip", "knee", "ankle"):
        p = rng.normal(size=dim)
        p[0] = -abs(p[0]) - 0.5
        q = p.copy()
        q[0] = -q[0]
        pos[f"left_{kind}"], pos[f"right_{kind}"] = p, q
    return skeleton_from(pos, dim)


def _positions(sk):
    return {n: sk.position(n) for n in JOINTS}


# ------------------------------------------------------------ mirror_normal / reflect_vector

def test_mirror_normal_3d():
    sk = skeleton_from({"left_shoulder": [-1, 0, 0], "right_shoulder": [1, 0, 0]}, 3)
    assert np.array_equal(mirror_normal(sk, "shoulder"), [1.0, 0.0, 0.0])


def test_mirror_normal_2d():
    sk = skeleton_from({"left_shoulder": [0, 0], "right_shoulder": [0, 2]}, 2)
    assert np.array_equal(mirror_normal(sk, "shoulder"), [0.0, 1.0])


def test_mirror_normal_degenerate():
    sk = skeleton_from({"left_shoulder": [1, 1, 1], "right_shoulder": [1, 1, 1]}, 3)
    with pytest.raises(DegenerateGirdleError):
        mirror_normal(sk, "shoulder")


@pytest.mark.parametrize("v, expected", [
    ((0, 1, 0), (0, 1, 0)),
    ((1, 0, 0), (-1, 0, 0)),
    ((1, 1, 1), (-1, 1, 1)),
])
def test_reflect_vector_examples(v, expected):
    assert np.array_equal(reflect_vector(np.array(v, float), np.array([1.0, 0, 0])), expected)


vec3 = st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3).map(np.array)
unit3 = st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: np.array(v) / np.linalg.norm(v))


@given(v=vec3, n=unit3)
def test_reflection_is_involution(v, n):
    back = reflect_vector(reflect_vector(v, n), n)
    assert np.allclose(back, v, rtol=0, atol=1e-12 * max(1.0, np.linalg.norm(v)))


@given(v=vec3, n=unit3)
def test_reflection_preserves_norm(v, n):
    assert abs(np.linalg.norm(reflect_vector(v, n)) - np.linalg.norm(v)) <= 1e-12 * max(1.0, np.linalg.norm(v))


# ------------------------------------------------------------ limb_angle

def test_mirror_pose_gives_zero():
    prof = angle_profile(mirror_pose(np.random.default_rng(3)))
    assert all(abs(a) < 1e-12 for a in prof.angles.values())


def test_antiparallel_upper_arm_is_180():
    pos = {n: np.zeros(3) for n in JOINTS}
    pos.update({"left_shoulder": np.array([-1.0, 0, 0]), "right_shoulder": np.array([1.0, 0, 0]),
                "left_elbow": np.array([-1.0, -1, 0]), "right_elbow": np.array([1.0, 1, 0])})
    assert limb_angle(skeleton_from(pos), "upper_arm") == pytest.approx(180.0, abs=1e-12)


@pytest.mark.parametrize("dim", [2, 3])
def test_matches_householder_oracle(dim):
    rng = np.random.default_rng(100 + dim)
    worst = 0.0
    for _ in range(1000):
        sk = random_skeleton(rng, dim)
        pos = _positions(sk)
        for limb in LIMBS:
            worst = max(worst, abs(limb_angle(sk, limb) - householder_limb_angle(pos, limb)))
    assert worst < 1e-9


def test_occluded_wrist_only_invalidates_lower_arm():
    sk = random_skeleton(np.random.default_rng(0), 3)
    hidden = skeleton_from(_positions(sk), 3, hidden=("left_wrist",))
    prof = angle_profile(hidden)
    assert prof.validity == {"upper_arm": True, "lower_arm": False, "upper_leg": True, "lower_leg": True}
    assert math.isnan(prof.angles["lower_arm"])


def test_zero_length_limb_is_undefined():
    pos = _positions(random_skeleton(np.random.default_rng(1), 3))
    pos["left_knee"] = pos["left_hip"].copy()
    assert math.isnan(limb_angle(skeleton_from(pos), "upper_leg"))


def test_degenerate_girdle_is_undefined_not_error():
    pos = _positions(random_skeleton(np.random.default_rng(2), 3))
    pos["right_hip"] = pos["left_hip"].copy()
    prof = angle_profile(skeleton_from(pos))
    assert not prof.validity["upper_leg"] and not prof.validity["lower_leg"]
    assert prof.validity["upper_arm"]


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dim=st.sampled_from([2, 3]))
def test_side_swap_invariance(seed, dim):
    rng = np.random.default_rng(seed)
    sk = random_skeleton(rng, dim)
    pos = _positions(sk)
    swapped = {}
    for n, p in pos.items():
        side, kind = n.split("_")
        swapped[f"{'right' if side == 'left' else 'left'}_{kind}"] = p
    a, b = angle_profile(sk), angle_profile(skeleton_from(swapped, dim))
    for limb in LIMBS:
        assert abs(a.angles[limb] - b.angles[limb]) < 1e-9


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dim=st.sampled_from([2, 3]),
       scale=st.floats(1e-2, 1e3))
def test_rigid_and_scale_invariance(seed, dim, scale):
    rng = np.random.default_rng(seed)
    sk = random_skeleton(rng, dim)
    rot = _random_rotation(rng, dim)
    shift = rng.uniform(-50, 50, dim)
    moved = sk.transformed(lambda p: scale * (rot @ p) + shift)
    a, b = angle_profile(sk), angle_profile(moved)
    for limb in LIMBS:
        assert abs(a.angles[limb] - b.angles[limb]) < 1e-9


# ------------------------------------------------------------ assess / classes

def _profile(vals):
    return AngleProfile("p", dict(zip(LIMBS, vals)), {l: not math.isnan(v) for l, v in zip(LIMBS, vals)})


@pytest.mark.parametrize("angle, theta, label", [
    (29.99, 30, "symmetric"),
    (30.0, 30, "asymmetric"),
    (50.0, 45, "asymmetric"),
])
def test_assess_threshold(angle, theta, label):
    assert assess(_profile([angle, 0, 0, 0]), theta).labels["upper_arm"] == label


def test_assess_undefined_and_range():
    a = assess(_profile([math.nan, 1, 2, 3]), 10)
    assert a.labels["upper_arm"] == "undefined"
    with pytest.raises(ValueError):
        assess(_profile([1, 1, 1, 1]), 180)


@given(angle=st.floats(0, 180), theta=st.floats(0.01, 179.99))
def test_assessment_is_prefix_in_theta(angle, theta):
    label = assess(_profile([angle] * 4), theta).labels["upper_arm"]
    assert (label == "asymmetric") == (theta <= angle)


@pytest.mark.parametrize("angle, cls", [(0.0, 0), (29.5, 0), (30.0, 1), (59.9, 1), (60.0, 2), (180.0, 2)])
def test_angle_class_bins(angle, cls):
    assert angle_class_of(angle) == cls


def test_angle_classes_vectorised():
    out = angle_classes([10.0, 30.0, np.nan, 75.0])
    assert out[0] == 0 and out[1] == 1 and np.isnan(out[2]) and out[3] == 2


def test_synthetic_targets_via_geometry():
    sk = make_skeleton({"upper_arm": 45, "lower_arm": 10, "upper_leg": 80, "lower_leg": 5}, 3,
                       np.random.default_rng(9))
    got = angle_profile(sk).angles
    for limb, t in zip(LIMBS, (45, 10, 80, 5)):
        assert abs(got[limb] - t) < 1e-9
