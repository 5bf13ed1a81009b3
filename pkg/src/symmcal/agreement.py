"""Inter-rater reliability, inter-limb agreement and internal consistency."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .skeleton import LIMBS


class UndefinedMetricError(ValueError):
    """Not enough overlapping data to define the statistic."""


def _pairwise_complete(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"label sequences differ in length: {a.shape[0]} vs {b.shape[0]}")
    ok = ~(np.isnan(a) | np.isnan(b))
    return a[ok], b[ok]


def cohen_kappa(a, b) -> float:
    """Cohen's kappa over items labelled by both raters (NaN = missing)."""
    a, b = _pairwise_complete(a, b)
    n = a.shape[0]
    if n == 0:
        raise UndefinedMetricError("no items rated by both raters")
    cats = np.union1d(a, b)
    p_o = float(np.mean(a == b))
    pa = np.array([np.mean(a == c) for c in cats])
    pb = np.array([np.mean(b == c) for c in cats])
    p_e = float(np.dot(pa, pb))
    if p_e >= 1.0:
        # both raters used one and the same category throughout
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


def _coincidence(table):
    """Coincidence matrix o[c, k] over pairable values, plus the category values."""
    t = np.asarray(table, dtype=float)
    if t.ndim != 2:
        raise ValueError("table must be raters x items")
    cats = np.unique(t[~np.isnan(t)])
    idx = {c: i for i, c in enumerate(cats)}
    o = np.zeros((cats.size, cats.size))
    for col in t.T:
        vals = col[~np.isnan(col)]
        m = vals.size
        if m < 2:
            continue
        counts = np.zeros(cats.size)
        for v in vals:
            counts[idx[v]] += 1
        # ordered pairs from distinct coders: n_c n_k, minus self-pairs on the diagonal
        pairs = np.outer(counts, counts) - np.diag(counts)
        o += pairs / (m - 1)
    return o, cats


def _ordinal_delta2(n_c: np.ndarray) -> np.ndarray:
    k = n_c.size
    d = np.zeros((k, k))
    cum = np.concatenate([[0.0], np.cumsum(n_c)])
    for i in range(k):
        for j in range(k):
            lo, hi = min(i, j), max(i, j)
            d[i, j] = (cum[hi + 1] - cum[lo] - (n_c[i] + n_c[j]) / 2.0) ** 2
    return d


def krippendorff_alpha(table, metric: str = "nominal") -> float:
    """Krippendorff's alpha for a raters x items table with NaN for missing cells."""
    o, cats = _coincidence(table)
    n_c = o.sum(axis=1)
    n = n_c.sum()
    if n == 0:
        raise UndefinedMetricError("no item has two or more ratings")
    if metric == "nominal":
        d2 = 1.0 - np.eye(cats.size)
    elif metric == "ordinal":
        d2 = _ordinal_delta2(n_c)
    else:
        raise ValueError(f"unsupported metric {metric!r}")
    d_o = float((o * d2).sum()) / n
    d_e = float((np.outer(n_c, n_c) * d2).sum()) / (n * (n - 1.0))
    if d_e == 0.0:
        # a single category was used; nothing to disagree about
        return 1.0
    return 1.0 - d_o / d_e


def pairwise_kappa_matrix(labels) -> np.ndarray:
    """Symmetric rater x rater kappa matrix over pooled items, unit diagonal."""
    y = np.asarray(labels, dtype=float)
    r = y.shape[0]
    k = np.eye(r)
    for i in range(r):
        for j in range(i + 1, r):
            try:
                k[i, j] = k[j, i] = cohen_kappa(y[i], y[j])
            except UndefinedMetricError:
                k[i, j] = k[j, i] = np.nan
    return k


def _quiet_nanmean(x, axis=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(x, axis=axis)


def mean_offdiag(matrix: np.ndarray) -> np.ndarray:
    m = np.array(matrix, dtype=float)
    np.fill_diagonal(m, np.nan)
    return _quiet_nanmean(m, axis=1)


def inter_limb_agreement(labels) -> np.ndarray:
    """Limb x limb kappa of one labeler, from an (images, limbs) label grid."""
    grid = np.asarray(labels, dtype=float)
    if grid.ndim != 2 or grid.shape[1] < 2:
        raise ValueError("need an (images, limbs) grid with at least two limbs")
    return pairwise_kappa_matrix(grid.T)


def internal_consistency(symmetry_labels, angle_labels) -> float:
    """Kappa between symmetry labels and angle classes binarised at 30 degrees."""
    ang = np.asarray(angle_labels, dtype=float)
    with np.errstate(invalid="ignore"):
        binar = np.where(np.isnan(ang), np.nan, (ang >= 1).astype(float))
    return cohen_kappa(symmetry_labels, binar)


@dataclass
class LabelSource:
    """One labeler's (images, 4) symmetry and angle-class grids (NaN = missing)."""

    name: str
    symmetry: np.ndarray
    angle_class: np.ndarray | None = None


@dataclass
class AgreementReport:
    raters: list[str]
    pairwise_kappa: dict[str, np.ndarray]  # per label kind
    mean_kappa_per_rater: dict[str, np.ndarray]
    mean_kappa_per_limb: dict[str, dict[str, float]]
    krippendorff_alpha: dict[str, float]
    inter_limb: dict[str, dict[str, np.ndarray]]  # kind -> source -> matrix
    internal_consistency: dict[str, float]
    mean_kappa_vs_raters: dict[str, dict[str, float]]  # kind -> source -> value
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def mat(m):
            return [[None if np.isnan(v) else float(v) for v in row] for row in np.asarray(m)]

        def vec(v):
            return [None if np.isnan(x) else float(x) for x in np.asarray(v)]

        def num(x):
            return None if x is None or np.isnan(x) else float(x)

        return {
            "raters": self.raters,
            "limbs": list(LIMBS),
            "pairwise_kappa": {k: mat(v) for k, v in self.pairwise_kappa.items()},
            "mean_kappa_per_rater": {k: vec(v) for k, v in self.mean_kappa_per_rater.items()},
            "mean_kappa_per_limb": {k: {l: num(x) for l, x in v.items()}
                                    for k, v in self.mean_kappa_per_limb.items()},
            "krippendorff_alpha": {k: num(v) for k, v in self.krippendorff_alpha.items()},
            "inter_limb": {k: {s: mat(m) for s, m in v.items()} for k, v in self.inter_limb.items()},
            "internal_consistency": {k: num(v) for k, v in self.internal_consistency.items()},
            "mean_kappa_vs_raters": {k: {s: num(x) for s, x in v.items()}
                                     for k, v in self.mean_kappa_vs_raters.items()},
            "metadata": self.metadata,
        }


def _safe(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetricError:
        return float("nan")


def agreement_report(table, sources=(), alpha_metric: dict | None = None) -> AgreementReport:
    """Reliability diagnostics for a RatingTable plus optional extra labelers.

    Human raters appear as sources under their rater ids; ``sources`` adds
    aggregates or pose-based assessments aligned with ``table.images``.
    """
    alpha_metric = {"symmetry": "nominal", "angle_class": "nominal", **(alpha_metric or {})}
    kinds = ("symmetry", "angle_class")
    pairwise, mean_rater, mean_limb, alpha = {}, {}, {}, {}
    for kind in kinds:
        y = table.as_float(kind)
        pairwise[kind] = pairwise_kappa_matrix(y)
        mean_rater[kind] = mean_offdiag(pairwise[kind]) if table.n_raters > 1 else np.array([])
        by_limb = {}
        for k, limb in enumerate(table.limbs):
            if table.n_raters > 1:
                sub = pairwise_kappa_matrix(y[:, k::len(table.limbs)])
                by_limb[limb] = float(_quiet_nanmean(mean_offdiag(sub)))
            else:
                by_limb[limb] = float("nan")
        mean_limb[kind] = by_limb
        alpha[kind] = _safe(krippendorff_alpha, y, alpha_metric[kind])

    all_sources = [
        LabelSource(r, table.by_image("symmetry")[i], table.by_image("angle_class")[i])
        for i, r in enumerate(table.raters)
    ] + list(sources)

    inter = {kind: {} for kind in kinds}
    consistency, vs_raters = {}, {kind: {} for kind in kinds}
    for src in all_sources:
        grids = {"symmetry": src.symmetry, "angle_class": src.angle_class}
        for kind in kinds:
            g = grids[kind]
            if g is None:
                continue
            inter[kind][src.name] = inter_limb_agreement(g)
            if src.name not in table.raters and table.n_raters:
                flat = np.asarray(g, dtype=float).ravel()
                ks = [_safe(cohen_kappa, flat, table.as_float(kind)[i]) for i in range(table.n_raters)]
                vs_raters[kind][src.name] = float(np.nanmean(ks)) if not np.all(np.isnan(ks)) else float("nan")
        if src.angle_class is not None:
            consistency[src.name] = _safe(internal_consistency, src.symmetry, src.angle_class)

    human = [consistency[r] for r in table.raters if r in consistency]
    if human:
        consistency["mean_human"] = float(np.nanmean(human))
    meta = {
        "kappa_pooling": "pooled over (image, limb) cells, pairwise deletion",
        "krippendorff_metric": alpha_metric,
        "internal_consistency": "kappa(symmetry, angle_class >= 1)",
        "inter_limb_statistic": "cohen_kappa",
    }
    return AgreementReport(list(table.raters), pairwise, mean_rater, mean_limb, alpha,
                           inter, consistency, vs_raters, meta)
