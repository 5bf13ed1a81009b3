"""Acceptance criteria 1-12, one test per criterion.

Each test records a one-line PASS/FAIL verdict that is printed in the
pytest terminal summary. Criterion 12 needs the released real data; point
SYMMCAL_REAL_DATA at a directory holding ``config.json`` to run it.
"""
import csv
import hashlib
import json
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from acceptance_log import ACCEPTANCE_LINES
from oracles import alpha_by_pairs, auc_pairwise, householder_limb_angle, logistic_grid_search, nominal_delta2
from symmcal.aggregation import combine_ordinal, em_binary, em_ordinal, majority_init
from symmcal.agreement import cohen_kappa, krippendorff_alpha
from symmcal.calibration import (
    add_intercept, fit_logistic, kappa_threshold_sweep, penalized_nll, penalized_nll_grad, roc_auc,
)
from symmcal.cli import main
from symmcal.factors import build_design, factor_analysis, null_model, pseudo_r2
from symmcal.geometry import angle_profile, limb_angle
from symmcal.skeleton import JOINTS, LIMBS, Keypoint, Skeleton
from symmcal.synthetic import RaterSpec, _random_rotation, make_skeleton, simulate_raters

from conftest import write_study


@contextmanager
def criterion(number, title):
    details = []
    try:
        yield details
    except BaseException as exc:
        if isinstance(exc, pytest.skip.Exception):
            ACCEPTANCE_LINES[number] = f"criterion {number:2d}: NOT RUN  {title}: {exc}"
        else:
            ACCEPTANCE_LINES[number] = f"criterion {number:2d}: FAIL  {title}: {exc!s:.200}"
        raise
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: PASS  {title}" + (f" ({'; '.join(details)})" if details else "")


def _random_skeleton(rng, dim):
    return Skeleton("r", dim, {n: Keypoint(n, rng.normal(size=dim)) for n in JOINTS})


def test_c01_geometry_matches_householder_oracle():
    with criterion(1, "limb_angle vs Householder-matrix oracle, 1000 3D + 1000 2D, < 1e-9 deg, < 5 s") as d:
        start = time.perf_counter()
        worst = 0.0
        for dim in (3, 2):
            rng = np.random.default_rng(1000 + dim)
            for _ in range(1000):
                sk = _random_skeleton(rng, dim)
                pos = {n: sk.position(n) for n in JOINTS}
                for limb in LIMBS:
                    worst = max(worst, abs(limb_angle(sk, limb) - householder_limb_angle(pos, limb)))
        elapsed = time.perf_counter() - start
        d += [f"max err {worst:.2e} deg", f"{elapsed:.2f} s"]
        assert worst < 1e-9, f"max error {worst}"
        assert elapsed < 5.0, f"runtime {elapsed:.2f} s"


def test_c02_rigid_and_scale_invariance():
    with criterion(2, "500 rigid transforms + uniform scales change no angle > 1e-9 deg") as d:
        rng = np.random.default_rng(2)
        worst = 0.0
        for i in range(500):
            dim = 3 if i % 2 == 0 else 2
            sk = _random_skeleton(rng, dim)
            rot = _random_rotation(rng, dim)
            scale = float(np.exp(rng.uniform(np.log(1e-2), np.log(1e3))))
            shift = rng.uniform(-100, 100, dim)
            moved = sk.transformed(lambda p: scale * (rot @ p) + shift)
            a, b = angle_profile(sk).as_array(), angle_profile(moved).as_array()
            worst = max(worst, float(np.max(np.abs(a - b))))
        d.append(f"max change {worst:.2e} deg")
        assert worst <= 1e-9


def test_c03_synthetic_round_trip():
    with criterion(3, "make_skeleton targets reproduced within 1e-9 deg for 1000 specs") as d:
        rng = np.random.default_rng(3)
        worst = 0.0
        for i in range(1000):
            targets = dict(zip(LIMBS, rng.uniform(0, 180, 4)))
            sk = make_skeleton(targets, 3 if i % 2 == 0 else 2, rng, rigid=True)
            got = angle_profile(sk).as_array()
            worst = max(worst, float(np.max(np.abs(got - [targets[l] for l in LIMBS]))))
        d.append(f"max err {worst:.2e} deg")
        assert worst < 1e-9


@pytest.fixture(scope="module")
def recovery():
    rng = np.random.default_rng(4)
    images = [f"img{i:03d}" for i in range(700)]
    truth = (rng.random(2800) < 0.3).astype(int)
    true_cls = np.where(truth == 1, rng.integers(1, 3, 2800), 0)
    spec = RaterSpec(n_raters=10, seed=44)
    sens, spec_, _, _ = spec.resolve()
    table = simulate_raters(images, truth, spec, true_cls)
    start = time.perf_counter()
    result = em_binary(table.as_float(), rater_ids=table.raters)
    elapsed = time.perf_counter() - start
    return truth, sens, spec_, table, result, elapsed


def test_c04_em_recovery(recovery):
    truth, sens, spec, table, r, elapsed = recovery
    with criterion(4, "EM recovers 10 raters within 0.05, beats majority vote, monotone, < 10 s") as d:
        assert np.all((sens >= 0.6) & (sens <= 0.95)) and np.all((spec >= 0.6) & (spec <= 0.95))
        err_a = max(abs(p.sensitivity - a) for p, a in zip(r.profiles, sens))
        err_b = max(abs(p.specificity - b) for p, b in zip(r.profiles, spec))
        acc_em = float(np.mean(r.hard_labels == truth))
        acc_mv = float(np.mean((majority_init(table.as_float()) >= 0.5) == truth))
        tr = np.asarray(r.objective_trace)
        d += [f"max |da| {err_a:.3f}", f"max |db| {err_b:.3f}", f"acc {acc_em:.3f} vs vote {acc_mv:.3f}",
              f"{elapsed:.2f} s"]
        assert r.converged
        assert err_a <= 0.05 and err_b <= 0.05
        assert acc_em >= acc_mv
        assert np.all(np.diff(tr) >= -1e-9 * np.maximum(1.0, np.abs(tr[:-1])))
        assert elapsed < 10.0


def test_c05_ordinal_aggregation(recovery):
    _, _, _, table, _, _ = recovery
    with criterion(5, "ordinal class probabilities sum to 1 within 1e-9; q1=0.9,q2=0.4 case") as d:
        res = em_ordinal(table.as_float("angle_class"))
        dev = float(np.max(np.abs(res.class_probs.sum(axis=1) - 1.0)))
        d.append(f"max |sum-1| {dev:.1e}")
        assert dev <= 1e-9 and np.all(res.class_probs >= 0)
        p = combine_ordinal(0.9, 0.4)[0]
        # equality with the combination rule's own float arithmetic, and with the decimal triple
        assert p.tolist() == [1.0 - 0.9, 0.9 - 0.4, 0.4]
        assert np.max(np.abs(p - [0.1, 0.5, 0.4])) <= 1e-15
        assert int(np.argmax(p)) == 1


def test_c06_kappa_alpha_unit_suite():
    with criterion(6, "kappa 2x2 zero case, perfect agreement, alpha vs coincidence hand oracle"):
        assert cohen_kappa([1, 1, 0, 0], [1, 0, 0, 1]) == 0.0
        assert cohen_kappa([0, 1, 2, 1], [0, 1, 2, 1]) == 1.0
        assert krippendorff_alpha([[0, 1, 2, 1], [0, 1, 2, 1]]) == 1.0
        table = [[0, 1, 0, 1], [1, 0, 1, 0]]
        assert abs(krippendorff_alpha(table) - alpha_by_pairs(table, nominal_delta2)) <= 1e-12
        assert krippendorff_alpha(table) == -0.75


def test_c07_auc_equivalence():
    with criterion(7, "trapezoid AUC vs pairwise oracle and monotone transforms, 200 sets, 1e-12") as d:
        rng = np.random.default_rng(7)
        worst = worst_t = 0.0
        for _ in range(200):
            n = int(rng.integers(2, 120))
            y = rng.integers(0, 2, n)
            y[:2] = [0, 1]
            s = rng.integers(0, 10, n) / 3.0 if rng.random() < 0.5 else rng.normal(size=n)
            a = roc_auc(s, y).auc
            worst = max(worst, abs(a - auc_pairwise(s, y)))
            for f in (np.exp, lambda v: 5 * v - 2, np.arctan):
                worst_t = max(worst_t, abs(roc_auc(f(s), y).auc - a))
        d += [f"oracle {worst:.1e}", f"transform {worst_t:.1e}"]
        assert worst <= 1e-12 and worst_t <= 1e-12


def test_c08_logistic_fit():
    with criterion(8, "gradient vs central differences, non-increasing deviance, 1-D grid oracle") as d:
        rng = np.random.default_rng(8)
        worst = 0.0
        h = 1e-5
        for _ in range(50):
            n, k = int(rng.integers(5, 80)), int(rng.integers(1, 5))
            X = add_intercept(rng.normal(size=(n, k)))
            y = (rng.random(n) < 0.5).astype(float)
            w = rng.normal(size=k + 1)
            ridge = float(rng.choice([0.0, 1e-6, 1.0]))
            g = penalized_nll_grad(w, X, y, ridge)
            fd = np.array([(penalized_nll(w + h * e, X, y, ridge) - penalized_nll(w - h * e, X, y, ridge)) / (2 * h)
                           for e in np.eye(k + 1)])
            worst = max(worst, float(np.linalg.norm(g - fd) / max(1.0, np.linalg.norm(g))))
        assert worst <= 1e-6
        for _ in range(20):
            X = rng.normal(size=(300, 3))
            y = (rng.random(300) < 1 / (1 + np.exp(-X @ [1.0, -2.0, 0.5]))).astype(float)
            m = fit_logistic(X, y)
            assert np.all(np.diff(m.objective_trace) <= 0)
        x, yy = [-2.0, -1.0, 1.0, 2.0], [0, 0, 1, 1]
        grid_err = 0.0
        for ridge in (1e-6, 1e-2, 1.0):
            m = fit_logistic(np.array(x), np.array(yy), ridge=ridge)
            grid_err = max(grid_err, float(np.max(np.abs(m.coefficients - logistic_grid_search(x, yy, ridge)))))
        d += [f"fd rel err {worst:.1e}", f"grid err {grid_err:.1e}"]
        assert grid_err <= 1e-3


def test_c09_self_consistent_calibration():
    with criterion(9, "labels = angle >= 40 gives theta* = 40 with kappa = 1"):
        rng = np.random.default_rng(9)
        a = rng.uniform(0, 90, 2800)
        assert np.any((a >= 39) & (a < 40)), "test data needs an angle in [39, 40)"
        curve, theta = kappa_threshold_sweep(a, (a >= 40).astype(float))
        assert theta == 40.0 and dict(curve)[40.0] == 1.0


def test_c10_factor_sanity():
    with criterion(10, "angle-only response: angle has largest |dR2_CS|; R2_N >= R2_CS on all fits") as d:
        rng = np.random.default_rng(10)
        n_img = 700
        limb = np.tile(LIMBS, n_img)
        posture = np.repeat(rng.choice(["supine", "prone", "sitting", "standing"], n_img), 4)
        occl = (rng.random(n_img * 4) < 0.25).astype(float)
        angle = rng.uniform(0, 3, n_img * 4)
        y = (rng.random(n_img * 4) < 1 / (1 + np.exp(-2.5 * (angle - 1.2)))).astype(float)
        design = build_design(y, limb, posture, occl, angle)
        rep = factor_analysis(design)
        mags = {g: abs(v) for g, v in rep.delta_r2_cs.items()}
        d.append(", ".join(f"{g} {v:+.3f}" for g, v in rep.delta_r2_cs.items()))
        assert max(mags, key=mags.get) == "angle"
        null = null_model(design.response)
        fits = [fit_logistic(design.columns, design.response)]
        fits += [fit_logistic(design.without(g), design.response) for g in design.groups if design.groups[g]]
        for m in fits:
            r2_cs, r2_n = pseudo_r2(m, null, design.response.size)
            assert r2_n >= r2_cs


def test_c11_determinism(tmp_path):
    with criterion(11, "two `symmcal run` with one config are byte-identical") as d:
        cfg = write_study(tmp_path / "study")
        for name in ("a", "b"):
            assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / name)]) == 0

        def digest(root):
            return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
                    for p in sorted(root.rglob("*")) if p.is_file()}

        da, db = digest(tmp_path / "a"), digest(tmp_path / "b")
        d.append(f"{len(da)} files")
        assert da == db


REAL_TARGETS = {
    "alpha": {"angle_class": 0.30, "symmetry": 0.18},
    "auc": {"3d_infant": 0.68, "2d_infant": 0.61, "3d_adult": 0.60},
    "factors": {"bayesian": (0.408, 0.832, -0.342), "pose3d": (0.455, 0.908, -0.366)},
}


def test_c12_real_data_reproduction(tmp_path):
    with criterion(12, "real-data reproduction (alpha, AUC, factor model)") as d:
        root = os.environ.get("SYMMCAL_REAL_DATA")
        if not root or not (Path(root) / "config.json").exists():
            pytest.skip("released data not available; set SYMMCAL_REAL_DATA to a directory with config.json")
        out = tmp_path / "real"
        assert main(["run", "--config", str(Path(root) / "config.json"), "--out-dir", str(out)]) == 0
        agree = json.loads((out / "agreement.json").read_text())
        for kind, target in REAL_TARGETS["alpha"].items():
            got = agree["krippendorff_alpha"][kind]
            d.append(f"alpha {kind} {got:.3f}")
            assert abs(got - target) <= 0.02
        with open(out / "estimators.csv", newline="") as fh:
            auc = {r["source"]: float(r["auc_symmetry"]) for r in csv.DictReader(fh)}
        for src, target in REAL_TARGETS["auc"].items():
            d.append(f"AUC {src} {auc[src]:.3f}")
            assert abs(auc[src] - target) <= 0.03
        for name, (r2, acc, dangle) in REAL_TARGETS["factors"].items():
            f = json.loads((out / "factors" / f"{name}.json").read_text())
            assert abs(f["r2_cs"] - r2) <= 0.03 and abs(f["accuracy"] - acc) <= 0.03
            assert abs(f["delta_r2_cs"]["angle"] - dangle) <= 0.03
