"""Mirror-reflection angle differences between left and right limbs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .skeleton import LIMB_GIRDLE, LIMB_JOINTS, LIMBS, Skeleton

EPS_LEN = 1e-6
ANGLE_CLASS_EDGES = (30.0, 60.0)

ASYMMETRIC = "asymmetric"
SYMMETRIC = "symmetric"
UNDEFINED = "undefined"


class DegenerateGirdleError(ValueError):
    """Left and right girdle joints (nearly) coincide."""


@dataclass
class AngleProfile:
    image_id: str
    angles: dict[str, float]  # NaN where undefined
    validity: dict[str, bool]

    def as_array(self) -> np.ndarray:
        return np.array([self.angles[limb] for limb in LIMBS])


@dataclass
class SymmetryAssessment:
    image_id: str
    labels: dict[str, str]
    threshold_deg: float
    angles: dict[str, float] = field(default_factory=dict)

    def as_binary(self) -> np.ndarray:
        """1 = asymmetric, 0 = symmetric, NaN = undefined, in LIMBS order."""
        code = {ASYMMETRIC: 1.0, SYMMETRIC: 0.0, UNDEFINED: np.nan}
        return np.array([code[self.labels[limb]] for limb in LIMBS])


def vector_angle(u: np.ndarray, v: np.ndarray) -> float:
    """Angle in degrees between two vectors.

    Uses atan2(|u x v|, u.v), which stays accurate near 0 and 180 degrees
    where arccos of the normalised dot product loses half the digits.
    """
    dot = float(np.dot(u, v))
    if u.shape[0] == 2:
        cross = abs(float(u[0] * v[1] - u[1] * v[0]))
    else:
        cross = float(np.linalg.norm(np.cross(u, v)))
    return math.degrees(math.atan2(cross, dot))


def mirror_normal(skeleton: Skeleton, girdle: str) -> np.ndarray:
    """Unit normal of the mid-perpendicular of the shoulder or hip segment."""
    if girdle not in ("shoulder", "hip"):
        raise ValueError(f"girdle must be 'shoulder' or 'hip', got {girdle!r}")
    left = skeleton.position(f"left_{girdle}")
    right = skeleton.position(f"right_{girdle}")
    d = right - left
    length = float(np.linalg.norm(d))
    if not math.isfinite(length) or length < EPS_LEN:
        raise DegenerateGirdleError(f"{skeleton.image_id}: degenerate {girdle} girdle")
    return d / length


def reflect_vector(v: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Reflect a direction vector across the hyperplane with unit normal ``n``."""
    v = np.asarray(v, dtype=float)
    return v - 2.0 * np.dot(v, n) * n


def limb_angle(skeleton: Skeleton, limb: str) -> float:
    """Angle between the mirrored right limb and the left limb, or NaN.

    Alignment of the proximal joints is implicit: only direction vectors enter.
    """
    girdle = LIMB_GIRDLE[limb]
    prox, dist = LIMB_JOINTS[limb]
    needed = {f"{s}_{j}" for s in ("left", "right") for j in (prox, dist, girdle)}
    if not all(skeleton.is_visible(name) for name in needed):
        return math.nan
    try:
        n = mirror_normal(skeleton, girdle)
    except DegenerateGirdleError:
        return math.nan
    v_right = skeleton.position(f"right_{dist}") - skeleton.position(f"right_{prox}")
    v_left = skeleton.position(f"left_{dist}") - skeleton.position(f"left_{prox}")
    if np.linalg.norm(v_right) < EPS_LEN or np.linalg.norm(v_left) < EPS_LEN:
        return math.nan
    return vector_angle(reflect_vector(v_right, n), v_left)


def angle_profile(skeleton: Skeleton) -> AngleProfile:
    angles = {limb: limb_angle(skeleton, limb) for limb in LIMBS}
    validity = {limb: not math.isnan(a) for limb, a in angles.items()}
    return AngleProfile(skeleton.image_id, angles, validity)


def assess(profile: AngleProfile, theta: float) -> SymmetryAssessment:
    if not 0.0 < theta < 180.0:
        raise ValueError(f"threshold must lie in (0, 180), got {theta}")
    labels = {}
    for limb in LIMBS:
        a = profile.angles[limb]
        if not profile.validity[limb]:
            labels[limb] = UNDEFINED
        else:
            labels[limb] = ASYMMETRIC if a >= theta else SYMMETRIC
    return SymmetryAssessment(profile.image_id, labels, theta, dict(profile.angles))


def angle_class_of(angle: float) -> int:
    """Ordinal bin: 0 for [0, 30), 1 for [30, 60), 2 for [60, 180]."""
    if angle < ANGLE_CLASS_EDGES[0]:
        return 0
    if angle < ANGLE_CLASS_EDGES[1]:
        return 1
    return 2


def angle_classes(angles: np.ndarray) -> np.ndarray:
    """Vectorised ``angle_class_of``; NaN stays NaN."""
    angles = np.asarray(angles, dtype=float)
    out = np.digitize(angles, ANGLE_CLASS_EDGES).astype(float)
    out[np.isnan(angles)] = np.nan
    return out


def profiles_matrix(profiles) -> np.ndarray:
    """(n_images, 4) angle matrix from a sequence of profiles."""
    return np.array([p.as_array() for p in profiles]).reshape(-1, len(LIMBS))


def histogram(angles: np.ndarray, bin_width: float = 5.0):
    """Counts of valid angles in fixed-width bins over [0, 180]."""
    edges = np.arange(0.0, 180.0 + bin_width, bin_width)
    a = np.asarray(angles, dtype=float)
    counts, _ = np.histogram(a[~np.isnan(a)], bins=edges)
    return edges, counts
