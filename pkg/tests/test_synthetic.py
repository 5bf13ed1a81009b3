import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from symmcal.agreement import cohen_kappa
from symmcal.aggregation import em_binary
from symmcal.geometry import angle_profile
from symmcal.skeleton import JOINTS, LIMBS
from symmcal.synthetic import (
    RaterSpec, SynthSpec, default_confusion, make_dataset, make_skeleton, perturb, simulate_raters,
)

IMAGES = [f"im{i}" for i in range(700)]


def test_zero_targets_mirror_perfect():
    for dim in (2, 3):
        prof = angle_profile(make_skeleton({l: 0.0 for l in LIMBS}, dim, np.random.default_rng(dim)))
        assert all(abs(a) < 1e-9 for a in prof.angles.values())


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dim=st.sampled_from([2, 3]),
       t=st.lists(st.floats(0, 180), min_size=4, max_size=4))
def test_targets_reproduced(seed, dim, t):
    sk = make_skeleton(dict(zip(LIMBS, t)), dim, np.random.default_rng(seed))
    prof = angle_profile(sk)
    for limb, target in zip(LIMBS, t):
        assert abs(prof.angles[limb] - target) < 1e-9


def test_out_of_range_target():
    with pytest.raises(ValueError):
        make_skeleton({"upper_arm": 181.0, "lower_arm": 0, "upper_leg": 0, "lower_leg": 0})
    with pytest.raises(ValueError):
        make_skeleton({"upper_arm": -1.0, "lower_arm": 0, "upper_leg": 0, "lower_leg": 0})


def test_dataset_deterministic():
    a, ta = make_dataset(SynthSpec(n_images=20, dim=2, seed=4))
    b, tb = make_dataset(SynthSpec(n_images=20, dim=2, seed=4))
    assert np.array_equal(ta, tb)
    for x, y in zip(a, b):
        assert x.posture == y.posture
        for n in JOINTS:
            assert np.array_equal(x.position(n), y.position(n))
    _, tc = make_dataset(SynthSpec(n_images=20, dim=2, seed=5))
    assert not np.array_equal(ta, tc)


def test_perturb_noise_and_drop():
    sks, _ = make_dataset(SynthSpec(n_images=50, seed=1))
    noisy = perturb(sks, 0.05, seed=2, drop_rate=0.1)
    hidden = sum(not kp.visible for sk in noisy for kp in sk.keypoints.values())
    assert 0.05 < hidden / (50 * 12) < 0.15
    assert perturb(sks, 0.05, 2, 0.1)[0].position("left_knee").tolist() == noisy[0].position("left_knee").tolist() \
        or np.isnan(noisy[0].position("left_knee")).all()


def test_perfect_raters_copy_truth():
    truth = np.random.default_rng(0).integers(0, 2, 2800)
    cls = np.random.default_rng(1).integers(0, 3, 2800)
    t = simulate_raters(IMAGES, truth, RaterSpec(n_raters=3, sensitivity=[1.0] * 3, specificity=[1.0] * 3,
                                                 angle_confusion=[np.eye(3)] * 3), cls)
    assert np.array_equal(t.symmetry, np.tile(truth, (3, 1)))
    assert np.array_equal(t.angle_class, np.tile(cls, (3, 1)))


def test_coin_flip_raters_chance_kappa():
    truth = np.random.default_rng(0).integers(0, 2, 2800)
    t = simulate_raters(IMAGES, truth, RaterSpec(n_raters=3, sensitivity=[0.5] * 3, specificity=[0.5] * 3))
    for row in t.symmetry:
        assert abs(cohen_kappa(row, truth)) < 0.06


def test_simulation_deterministic_and_flip_rates():
    truth = np.random.default_rng(3).integers(0, 2, 2800)
    spec = RaterSpec(n_raters=2, sensitivity=[0.8, 0.7], specificity=[0.9, 0.6], seed=12, missing_rate=0.1)
    a, b = simulate_raters(IMAGES, truth, spec), simulate_raters(IMAGES, truth, spec)
    assert np.array_equal(a.symmetry, b.symmetry)
    for j, (se, sp) in enumerate([(0.8, 0.9), (0.7, 0.6)]):
        row, ok = a.symmetry[j], a.symmetry[j] >= 0
        assert abs(row[ok & (truth == 1)].mean() - se) < 0.04
        assert abs(1 - row[ok & (truth == 0)].mean() - sp) < 0.04
        assert abs((~ok).mean() - 0.1) < 0.02


def test_confusion_rows_are_stochastic():
    for acc in (0.5, 0.8, 1.0):
        c = default_confusion(acc)
        assert np.allclose(c.sum(axis=1), 1) and (c >= 0).all()
    with pytest.raises(ValueError):
        RaterSpec(n_raters=1, angle_confusion=[np.full((3, 3), 0.5)]).resolve()


def test_mixed_raters_recovered():
    rng = np.random.default_rng(77)
    truth = (rng.random(2800) < 0.3).astype(int)
    spec = RaterSpec(n_raters=10, seed=78)
    sens, spc, _, _ = spec.resolve()
    t = simulate_raters(IMAGES, truth, spec)
    r = em_binary(t.as_float(), rater_ids=t.raters)
    for p, se, sp in zip(r.profiles, sens, spc):
        assert abs(p.sensitivity - se) <= 0.05 and abs(p.specificity - sp) <= 0.05
