"""Keypoint, rating and occlusion data model plus file ingestion."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SIDES = ("left", "right")
JOINT_KINDS = ("shoulder", "elbow", "wrist", "hip", "knee", "ankle")
JOINTS = tuple(f"{side}_{kind}" for side in SIDES for kind in JOINT_KINDS)

LIMBS = ("upper_arm", "lower_arm", "upper_leg", "lower_leg")
# limb -> (proximal joint kind, distal joint kind)
LIMB_JOINTS = {
    "upper_arm": ("shoulder", "elbow"),
    "lower_arm": ("elbow", "wrist"),
    "upper_leg": ("hip", "knee"),
    "lower_leg": ("knee", "ankle"),
}
LIMB_GIRDLE = {
    "upper_arm": "shoulder",
    "lower_arm": "shoulder",
    "upper_leg": "hip",
    "lower_leg": "hip",
}
POSTURES = ("supine", "prone", "sitting", "standing", "unknown")


class DataValidationError(ValueError):
    """Input data violates a format or domain constraint."""


@dataclass
class Keypoint:
    name: str
    position: np.ndarray
    confidence: float = 1.0
    visible: bool = True

    def __post_init__(self):
        if self.name not in JOINTS:
            raise DataValidationError(f"unknown joint name {self.name!r}")
        self.position = np.asarray(self.position, dtype=float)
        if self.position.shape not in ((2,), (3,)):
            raise DataValidationError(
                f"{self.name}: position must have 2 or 3 coordinates, got {self.position.shape}"
            )
        if not 0.0 <= self.confidence <= 1.0:
            raise DataValidationError(f"{self.name}: confidence {self.confidence} outside [0, 1]")
        if self.visible and not np.all(np.isfinite(self.position)):
            raise DataValidationError(f"{self.name}: visible keypoint has non-finite coordinates")

    @classmethod
    def missing(cls, name: str, dim: int) -> Keypoint:
        return cls(name, np.full(dim, np.nan), confidence=0.0, visible=False)


@dataclass
class Skeleton:
    image_id: str
    dim: int
    keypoints: dict[str, Keypoint]
    posture: str = "unknown"

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise DataValidationError(f"{self.image_id}: dim must be 2 or 3")
        if self.posture not in POSTURES:
            raise DataValidationError(f"{self.image_id}: unknown posture {self.posture!r}")
        if set(self.keypoints) != set(JOINTS):
            missing = sorted(set(JOINTS) - set(self.keypoints))
            raise DataValidationError(f"{self.image_id}: missing joints {missing}")
        for kp in self.keypoints.values():
            if kp.position.shape != (self.dim,):
                raise DataValidationError(
                    f"{self.image_id}: joint {kp.name} has dim {kp.position.shape[0]}, expected {self.dim}"
                )

    def position(self, joint: str) -> np.ndarray:
        return self.keypoints[joint].position

    def is_visible(self, joint: str) -> bool:
        return self.keypoints[joint].visible

    def limb_segments(self) -> dict[tuple[str, str], tuple[np.ndarray, np.ndarray]]:
        """All 8 (limb, side) segments as (proximal, distal) positions."""
        out = {}
        for limb in LIMBS:
            prox, dist = LIMB_JOINTS[limb]
            for side in SIDES:
                out[(limb, side)] = (
                    self.position(f"{side}_{prox}"),
                    self.position(f"{side}_{dist}"),
                )
        return out

    def transformed(self, fn) -> Skeleton:
        """Copy with ``fn`` applied to every joint position."""
        kps = {
            name: Keypoint(name, fn(kp.position), kp.confidence, kp.visible)
            for name, kp in self.keypoints.items()
        }
        return Skeleton(self.image_id, self.dim, kps, self.posture)


def _parse_record(rec, idx: int, dim: int) -> Skeleton:
    ctx = f"record {idx}"
    if not isinstance(rec, dict):
        raise DataValidationError(f"{ctx}: expected an object")
    try:
        image_id = str(rec["image_id"])
    except KeyError:
        raise DataValidationError(f"{ctx}: missing image_id") from None
    ctx = f"record {idx} (image_id={image_id!r})"
    rec_dim = rec.get("dim", dim)
    if rec_dim != dim:
        raise DataValidationError(f"{ctx}: dim {rec_dim} does not match requested dim {dim}")
    kps: dict[str, Keypoint] = {}
    for k in rec.get("keypoints", []):
        try:
            name = k["name"]
            pos = k.get("pos")
            visible = bool(k.get("visible", True))
            if pos is None:
                pos, visible = [math.nan] * dim, False
            if len(pos) != dim:
                raise DataValidationError(f"joint {name}: expected {dim} coordinates, got {len(pos)}")
            if name in kps:
                raise DataValidationError(f"duplicate joint {name}")
            kps[name] = Keypoint(name, [float("nan") if v is None else float(v) for v in pos],
                                 float(k.get("confidence", 1.0)), visible)
        except (KeyError, TypeError) as exc:
            raise DataValidationError(f"{ctx}: malformed keypoint entry {k!r} ({exc})") from None
        except DataValidationError as exc:
            raise DataValidationError(f"{ctx}: {exc}") from None
    for name in JOINTS:
        if name not in kps:
            kps[name] = Keypoint.missing(name, dim)
    try:
        return Skeleton(image_id, dim, kps, rec.get("posture", "unknown"))
    except DataValidationError as exc:
        raise DataValidationError(f"{ctx}: {exc}") from None


def load_keypoints(path, dim: int) -> list[Skeleton]:
    """Read the keypoint JSON format into skeletons.

    Joints absent from a record are kept as invisible keypoints with NaN
    coordinates and zero confidence.
    """
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"{path}: line {exc.lineno} col {exc.colno}: {exc.msg}") from None
    if not isinstance(data, list):
        raise DataValidationError(f"{path}: top level must be an array of records")
    skeletons = []
    seen = set()
    for idx, rec in enumerate(data):
        sk = _parse_record(rec, idx, dim)
        if sk.image_id in seen:
            raise DataValidationError(f"{path}: record {idx}: duplicate image_id {sk.image_id!r}")
        seen.add(sk.image_id)
        skeletons.append(sk)
    return skeletons


def skeletons_to_json(skeletons) -> list[dict]:
    out = []
    for sk in skeletons:
        kps = []
        for name in JOINTS:
            kp = sk.keypoints[name]
            pos = [float(v) if math.isfinite(v) else None for v in kp.position]
            kps.append({"name": name, "pos": pos, "confidence": kp.confidence, "visible": kp.visible})
        out.append({"image_id": sk.image_id, "posture": sk.posture, "dim": sk.dim, "keypoints": kps})
    return out


def save_keypoints(skeletons, path) -> None:
    Path(path).write_text(json.dumps(skeletons_to_json(skeletons), indent=1) + "\n")


# ---------------------------------------------------------------- ratings

RATING_FIELDS = ("rater_id", "image_id", "limb", "symmetry", "angle_class")
MISSING = -1


@dataclass
class RatingTable:
    """Dense rater x item label matrices; items are (image_id, limb) cells.

    Missing cells hold ``MISSING`` (-1).
    """

    raters: list[str]
    images: list[str]
    symmetry: np.ndarray  # (n_raters, n_images * 4) int
    angle_class: np.ndarray
    limbs: tuple[str, ...] = LIMBS

    @property
    def items(self) -> list[tuple[str, str]]:
        return [(img, limb) for img in self.images for limb in self.limbs]

    @property
    def n_raters(self) -> int:
        return len(self.raters)

    @property
    def n_items(self) -> int:
        return len(self.images) * len(self.limbs)

    def item_index(self, image_id: str, limb: str) -> int:
        return self.images.index(image_id) * len(self.limbs) + self.limbs.index(limb)

    def missing_mask(self, kind: str = "symmetry") -> np.ndarray:
        return getattr(self, kind) == MISSING

    def as_float(self, kind: str = "symmetry") -> np.ndarray:
        """Labels as float with NaN for missing cells."""
        arr = getattr(self, kind).astype(float)
        arr[arr == MISSING] = np.nan
        return arr

    def by_image(self, kind: str = "symmetry") -> np.ndarray:
        """(n_raters, n_images, 4) float view with NaN for missing."""
        return self.as_float(kind).reshape(self.n_raters, len(self.images), len(self.limbs))

    @classmethod
    def empty(cls) -> RatingTable:
        z = np.zeros((0, 0), dtype=int)
        return cls([], [], z, z.copy())


def _parse_label(value: str, allowed, field_name: str, row: int) -> int:
    value = value.strip()
    if value == "":
        return MISSING
    try:
        v = int(float(value))
        if float(value) != v:
            raise ValueError
    except ValueError:
        raise DataValidationError(f"row {row}: {field_name}={value!r} is not an integer") from None
    if v not in allowed:
        raise DataValidationError(f"row {row}: {field_name}={v} outside {sorted(allowed)}")
    return v


def load_ratings(path) -> RatingTable:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return RatingTable.empty()
        missing = set(RATING_FIELDS) - set(reader.fieldnames)
        if missing:
            raise DataValidationError(f"{path}: missing columns {sorted(missing)}")
        for i, r in enumerate(reader, start=2):
            limb = r["limb"].strip()
            if limb not in LIMBS:
                raise DataValidationError(f"row {i}: unknown limb {limb!r}")
            rows.append((
                r["rater_id"].strip(), r["image_id"].strip(), limb,
                _parse_label(r["symmetry"], {0, 1}, "symmetry", i),
                _parse_label(r["angle_class"], {0, 1, 2}, "angle_class", i),
                i,
            ))
    return ratings_from_rows(rows)


def ratings_from_rows(rows) -> RatingTable:
    """Build a table from (rater, image, limb, symmetry, angle_class[, row]) tuples."""
    raters: dict[str, int] = {}
    images: dict[str, int] = {}
    for r in rows:
        raters.setdefault(r[0], len(raters))
        images.setdefault(r[1], len(images))
    n_items = len(images) * len(LIMBS)
    sym = np.full((len(raters), n_items), MISSING, dtype=int)
    ang = sym.copy()
    seen = set()
    for k, r in enumerate(rows):
        rater, image, limb, s, a = r[:5]
        row = r[5] if len(r) > 5 else k
        key = (rater, image, limb)
        if key in seen:
            raise DataValidationError(f"row {row}: duplicate rating for {key}")
        seen.add(key)
        j = images[image] * len(LIMBS) + LIMBS.index(limb)
        sym[raters[rater], j] = s
        ang[raters[rater], j] = a
    return RatingTable(list(raters), list(images), sym, ang)


def save_ratings(table: RatingTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RATING_FIELDS)
        for ri, rater in enumerate(table.raters):
            for j, (img, limb) in enumerate(table.items):
                s, a = table.symmetry[ri, j], table.angle_class[ri, j]
                if s == MISSING and a == MISSING:
                    continue
                w.writerow([rater, img, limb,
                            "" if s == MISSING else int(s),
                            "" if a == MISSING else int(a)])


# ---------------------------------------------------------------- occlusion

@dataclass(frozen=True)
class OcclusionLabel:
    image_id: str
    limb: str
    occluded: bool


def _parse_bool(value: str, row: int) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes"):
        return True
    if v in ("0", "false", "no"):
        return False
    raise DataValidationError(f"row {row}: occluded={value!r} is not boolean")


def load_occlusion(path) -> dict[tuple[str, str], bool]:
    out: dict[tuple[str, str], bool] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for i, r in enumerate(reader, start=2):
            limb = r["limb"].strip()
            if limb not in LIMBS:
                raise DataValidationError(f"row {i}: unknown limb {limb!r}")
            key = (r["image_id"].strip(), limb)
            if key in out:
                raise DataValidationError(f"row {i}: duplicate occlusion label for {key}")
            out[key] = _parse_bool(r["occluded"], i)
    return out


def save_occlusion(labels: dict[tuple[str, str], bool], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "limb", "occluded"])
        for (img, limb), occ in labels.items():
            w.writerow([img, limb, int(occ)])

