"""Which factors drive symmetry labels: multi-covariate logistic regression and drop-one importance."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calibration import DEFAULT_RIDGE, LogisticModel, fit_logistic
from .skeleton import LIMBS

FACTOR_POSTURES = ("supine", "prone", "sitting", "standing")
GROUPS = ("limb", "posture", "occlusion", "angle")


@dataclass
class FactorDesign:
    """Response plus covariate groups, one row per (image, limb) cell."""

    response: np.ndarray
    columns: np.ndarray
    names: list[str]
    groups: dict[str, list[int]]
    n_dropped: int = 0
    notes: list[str] = field(default_factory=list)

    def without(self, group: str) -> np.ndarray:
        keep = [i for i in range(len(self.names)) if i not in self.groups[group]]
        return self.columns[:, keep]


def build_design(response, limb, posture, occluded, angle, angle_name: str = "angle") -> FactorDesign:
    """Dummy-code limb (ref upper_arm) and posture (ref supine); occlusion and angle numeric.

    Rows with a missing response or angle, or a posture outside the four
    known levels, are dropped. Dummy columns for levels absent from the
    remaining rows are left out.
    """
    y = np.asarray(response, dtype=float)
    limb = np.asarray(limb)
    posture = np.asarray(posture)
    occ = np.asarray(occluded, dtype=float)
    ang = np.asarray(angle, dtype=float)
    ok = ~(np.isnan(y) | np.isnan(ang) | np.isnan(occ)) & np.isin(posture, FACTOR_POSTURES)
    n_dropped = int((~ok).sum())
    y, limb, posture, occ, ang = y[ok], limb[ok], posture[ok], occ[ok], ang[ok]

    cols, names, groups, notes = [], [], {g: [] for g in GROUPS}, []

    def add(group, name, values):
        if group in ("limb", "posture") and not values.any():
            notes.append(f"level {name} absent; column omitted")
            return
        groups[group].append(len(names))
        names.append(name)
        cols.append(values)

    for lv in LIMBS[1:]:
        add("limb", f"limb[{lv}]", (limb == lv).astype(float))
    for lv in FACTOR_POSTURES[1:]:
        add("posture", f"posture[{lv}]", (posture == lv).astype(float))
    add("occlusion", "occluded", occ)
    add("angle", angle_name, ang)
    X = np.column_stack(cols) if cols else np.zeros((y.size, 0))
    return FactorDesign(y, X, names, groups, n_dropped, notes)


ANGLE_COLLAPSE = ("mean", "per-rater")


def human_angle_rows(response, limb, posture, occluded, rater_angles, collapse: str = "mean"):
    """Cell-level covariates with the raters' angle classes folded in.

    ``mean`` keeps one row per cell with the mean class over raters who rated
    it. ``per-rater`` repeats each cell once per rater, pairing the cell's
    response and covariates with that rater's class.
    Returns (response, limb, posture, occluded, angle, column name, note).
    """
    r = np.asarray(rater_angles, dtype=float)
    cells = (np.asarray(response, dtype=float), np.asarray(limb), np.asarray(posture),
             np.asarray(occluded, dtype=float))
    if collapse == "mean":
        return (*cells, _quiet_nanmean(r), "angle_class_mean", "per-cell mean of rater angle classes")
    if collapse == "per-rater":
        k = r.shape[0]
        return (*(np.tile(c, k) for c in cells), r.ravel(), "angle_class",
                f"one row per rater and cell ({k} raters)")
    raise ValueError(f"unknown angle collapse {collapse!r}; use one of {ANGLE_COLLAPSE}")


def _quiet_nanmean(r):
    out = np.full(r.shape[1], np.nan)
    seen = ~np.isnan(r)
    cnt = seen.sum(axis=0)
    np.divide(np.where(seen, r, 0.0).sum(axis=0), cnt, out=out, where=cnt > 0)
    return out


def pseudo_r2(model: LogisticModel, null_model: LogisticModel, n: int):
    """Cox-Snell and Nagelkerke pseudo-R^2 from model and null deviances."""
    if n <= 0:
        raise ValueError("n must be positive")
    r2_cs = 1.0 - math.exp((model.deviance - null_model.deviance) / n)
    max_cs = 1.0 - math.exp(-null_model.deviance / n)
    r2_n = r2_cs / max_cs if max_cs > 0 else float("nan")
    return r2_cs, r2_n


def classification_accuracy(model: LogisticModel, X, y, cut: float = 0.5) -> float:
    pred = (model.predict_proba(X) >= cut).astype(float)
    return float(np.mean(pred == np.asarray(y, dtype=float)))


def null_model(y, ridge: float = DEFAULT_RIDGE) -> LogisticModel:
    y = np.asarray(y, dtype=float)
    return fit_logistic(np.zeros((y.size, 0)), y, ridge=ridge, covariates=[])


def drop_one_importance(design: FactorDesign, ridge: float = DEFAULT_RIDGE,
                        full: LogisticModel | None = None, null: LogisticModel | None = None):
    """R^2_CS(reduced) - R^2_CS(full) for each covariate group; negative means it mattered."""
    y = design.response
    n = y.size
    full = full or fit_logistic(design.columns, y, ridge=ridge, covariates=design.names)
    null = null or null_model(y, ridge)
    r2_full, _ = pseudo_r2(full, null, n)
    out = {}
    for g, idx in design.groups.items():
        if not idx:
            continue
        names = [nm for i, nm in enumerate(design.names) if i not in idx]
        reduced = fit_logistic(design.without(g), y, ridge=ridge, covariates=names)
        out[g] = pseudo_r2(reduced, null, n)[0] - r2_full
    return out


@dataclass
class FactorReport:
    model: LogisticModel
    r2_cs: float
    r2_n: float
    accuracy: float
    delta_r2_cs: dict[str, float]
    n: int
    n_dropped: int
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        coefs = []
        for name, c, se, z, p in zip(self.model.covariates, self.model.coefficients,
                                     self.model.std_errors, self.model.z_scores, self.model.p_values):
            coefs.append({"name": name, "coef": float(c), "se": float(se), "z": float(z),
                          "p": float(p), "significant": bool(p < 0.05)})
        return {
            "coefficients": coefs,
            "r2_cs": self.r2_cs,
            "r2_n": self.r2_n,
            "accuracy": self.accuracy,
            "delta_r2_cs": self.delta_r2_cs,
            "n": self.n,
            "n_dropped": self.n_dropped,
            "deviance": self.model.deviance,
            "metadata": self.metadata,
        }


def factor_analysis(design: FactorDesign, ridge: float = DEFAULT_RIDGE, metadata=None) -> FactorReport:
    y = design.response
    full = fit_logistic(design.columns, y, ridge=ridge, covariates=design.names)
    null = null_model(y, ridge)
    r2_cs, r2_n = pseudo_r2(full, null, y.size)
    delta = drop_one_importance(design, ridge, full, null)
    meta = {"ridge": ridge, "design_notes": design.notes, **(metadata or {})}
    return FactorReport(full, r2_cs, r2_n, classification_accuracy(full, design.columns, y),
                        delta, int(y.size), design.n_dropped, meta)
