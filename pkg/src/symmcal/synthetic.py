"""Skeletons with known angle differences and simulated fallible raters."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import reflect_vector
from .skeleton import (
    JOINTS, LIMB_JOINTS, LIMBS, MISSING, Keypoint, RatingTable, Skeleton,
)

SHOULDER_WIDTH = 2.0
HIP_WIDTH = 1.6
TORSO = 3.0
LIMB_LENGTH = 1.0


@dataclass
class SynthSpec:
    n_images: int = 1
    dim: int = 3
    targets: dict[str, float] | None = None  # fixed angles; else sampled
    angle_sd: float = 30.0  # sampled angles are |N(0, angle_sd)| clipped to 180
    rigid: bool = True
    postures: tuple[str, ...] = ("supine", "prone", "sitting", "standing")
    seed: int = 0


def _unit(rng, dim):
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def _rotate_away(u: np.ndarray, deg: float, rng) -> np.ndarray:
    """Unit vector at exactly ``deg`` degrees from unit ``u``."""
    t = np.radians(deg)
    if u.shape[0] == 2:
        t *= rng.choice([-1.0, 1.0])
        c, s = np.cos(t), np.sin(t)
        return np.array([c * u[0] - s * u[1], s * u[0] + c * u[1]])
    # random axis orthogonal to u; Rodrigues reduces to cos(t) u + sin(t) (k x u)
    k = _unit(rng, 3)
    k = k - np.dot(k, u) * u
    k /= np.linalg.norm(k)
    return np.cos(t) * u + np.sin(t) * np.cross(k, u)


def _random_rotation(rng, dim):
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rigid_transform(skeleton: Skeleton, rng, scale: float = 1.0) -> Skeleton:
    rot = _random_rotation(rng, skeleton.dim)
    shift = rng.uniform(-100.0, 100.0, size=skeleton.dim)
    return skeleton.transformed(lambda p: scale * (rot @ p) + shift)


def make_skeleton(targets: dict[str, float], dim: int = 3, rng=None, image_id: str = "synth",
                  posture: str = "unknown", rigid: bool = False) -> Skeleton:
    """Skeleton whose four limb-pair angle differences equal ``targets`` (degrees).

    Left limbs point in random directions; each right limb is the mirror of
    its left partner rotated away by the target angle.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for limb in LIMBS:
        if not 0.0 <= targets[limb] <= 180.0:
            raise ValueError(f"{limb}: target angle {targets[limb]} outside [0, 180]")
    e0 = np.zeros(dim)
    e0[0] = 1.0
    down = np.zeros(dim)
    down[1] = -TORSO
    pos = {
        "left_shoulder": -0.5 * SHOULDER_WIDTH * e0,
        "right_shoulder": 0.5 * SHOULDER_WIDTH * e0,
        "left_hip": -0.5 * HIP_WIDTH * e0 + down,
        "right_hip": 0.5 * HIP_WIDTH * e0 + down,
    }
    # both girdles lie along e0, so e0 is the mirror normal for every pair
    for limb in LIMBS:
        prox, dist = LIMB_JOINTS[limb]
        d_left = _unit(rng, dim)
        d_right = _rotate_away(reflect_vector(d_left, e0), targets[limb], rng)
        pos[f"left_{dist}"] = pos[f"left_{prox}"] + LIMB_LENGTH * d_left
        pos[f"right_{dist}"] = pos[f"right_{prox}"] + LIMB_LENGTH * d_right
    kps = {name: Keypoint(name, pos[name]) for name in JOINTS}
    sk = Skeleton(image_id, dim, kps, posture)
    return rigid_transform(sk, rng) if rigid else sk


def sample_targets(rng, angle_sd: float) -> dict[str, float]:
    return {limb: float(min(abs(rng.normal(0.0, angle_sd)), 180.0)) for limb in LIMBS}


def make_dataset(spec: SynthSpec):
    """(skeletons, true angle matrix of shape (n_images, 4))."""
    rng = np.random.default_rng(spec.seed)
    skeletons, truth = [], []
    for i in range(spec.n_images):
        targets = dict(spec.targets) if spec.targets else sample_targets(rng, spec.angle_sd)
        posture = str(rng.choice(spec.postures))
        skeletons.append(make_skeleton(targets, spec.dim, rng, f"img{i:04d}", posture, spec.rigid))
        truth.append([targets[limb] for limb in LIMBS])
    return skeletons, np.array(truth).reshape(-1, len(LIMBS))


def perturb(skeletons, noise_sd: float, seed: int, drop_rate: float = 0.0):
    """Copies with Gaussian joint noise and randomly hidden joints, like a pose estimator's output."""
    rng = np.random.default_rng(seed)
    out = []
    for sk in skeletons:
        kps = {}
        for name in JOINTS:
            kp = sk.keypoints[name]
            if rng.random() < drop_rate:
                kps[name] = Keypoint.missing(name, sk.dim)
            else:
                kps[name] = Keypoint(name, kp.position + rng.normal(0.0, noise_sd, sk.dim),
                                     kp.confidence, kp.visible)
        out.append(Skeleton(sk.image_id, sk.dim, kps, sk.posture))
    return out


def default_confusion(accuracy: float) -> np.ndarray:
    """3x3 ordinal confusion: ``accuracy`` on the diagonal, the rest to neighbouring classes."""
    e = 1.0 - accuracy
    return np.array([
        [accuracy, e, 0.0],
        [e / 2, accuracy, e / 2],
        [0.0, e, accuracy],
    ])


@dataclass
class RaterSpec:
    n_raters: int = 10
    sensitivity: list[float] | None = None
    specificity: list[float] | None = None
    sens_range: tuple[float, float] = (0.6, 0.95)
    spec_range: tuple[float, float] = (0.6, 0.95)
    angle_confusion: list | None = None  # one 3x3 row-stochastic matrix per rater
    angle_accuracy_range: tuple[float, float] = (0.5, 0.9)
    missing_rate: float = 0.0
    seed: int = 0
    rater_ids: list[str] = field(default_factory=list)

    def resolve(self):
        """Concrete per-rater (sens, spec, confusion) drawn from the ranges where not given."""
        rng = np.random.default_rng([self.seed, 1])
        sens = np.asarray(self.sensitivity if self.sensitivity is not None
                          else rng.uniform(*self.sens_range, self.n_raters), dtype=float)
        spec = np.asarray(self.specificity if self.specificity is not None
                          else rng.uniform(*self.spec_range, self.n_raters), dtype=float)
        if self.angle_confusion is not None:
            conf = np.asarray(self.angle_confusion, dtype=float)
        else:
            acc = rng.uniform(*self.angle_accuracy_range, self.n_raters)
            conf = np.stack([default_confusion(a) for a in acc])
        if conf.shape != (self.n_raters, 3, 3) or not np.allclose(conf.sum(axis=2), 1.0) or (conf < 0).any():
            raise ValueError("angle_confusion must be n_raters row-stochastic 3x3 matrices")
        ids = self.rater_ids or [f"rater{j + 1:02d}" for j in range(self.n_raters)]
        return sens, spec, conf, ids


def simulate_raters(images, true_symmetry, spec: RaterSpec, true_angle_class=None) -> RatingTable:
    """Noisy ratings of (image, limb) cells laid out image-major.

    Each rater reports asymmetry with probability equal to their sensitivity
    on truly asymmetric cells and 1 - specificity on symmetric ones; angle
    classes are drawn from the rater's confusion row for the true class.
    """
    truth = np.asarray(true_symmetry, dtype=int).ravel()
    n_items = len(images) * len(LIMBS)
    if truth.size != n_items:
        raise ValueError(f"expected {n_items} labels, got {truth.size}")
    sens, spec_, conf, ids = spec.resolve()
    seqs = np.random.SeedSequence(spec.seed).spawn(spec.n_raters)
    sym = np.empty((spec.n_raters, n_items), dtype=int)
    ang = np.full((spec.n_raters, n_items), MISSING, dtype=int)
    tc = None if true_angle_class is None else np.asarray(true_angle_class, dtype=int).ravel()
    for j in range(spec.n_raters):
        rng = np.random.default_rng(seqs[j])
        u = rng.random(n_items)
        p1 = np.where(truth == 1, sens[j], 1.0 - spec_[j])
        sym[j] = (u < p1).astype(int)
        v = rng.random(n_items)
        if tc is not None:
            cum = np.cumsum(conf[j], axis=1)[tc]
            ang[j] = np.minimum((v[:, None] >= cum).sum(axis=1), 2)
        miss = rng.random(n_items) < spec.missing_rate
        sym[j, miss] = MISSING
        ang[j, miss] = MISSING
    return RatingTable(list(ids), list(images), sym, ang)
