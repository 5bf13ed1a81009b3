"""Logistic calibration of pose angles against consensus labels, ROC and threshold selection."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .agreement import UndefinedMetricError, cohen_kappa
from .geometry import angle_profile, assess
from .skeleton import LIMBS

logger = logging.getLogger(__name__)

DEFAULT_RIDGE = 1e-6
DEFAULT_THETA_GRID = np.arange(1.0, 91.0, 1.0)


class SeparationError(RuntimeError):
    """Unpenalised fit has no finite maximum likelihood estimate."""


# ------------------------------------------------------------ logistic model

def _log1pexp(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-_log1pexp(-x))


def add_intercept(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.column_stack([np.ones(X.shape[0]), X])


def deviance(w, X, y) -> float:
    """-2 log-likelihood; X already carries the intercept column."""
    eta = X @ w
    return float(2.0 * np.sum(_log1pexp(eta) - y * eta))


def penalized_nll(w, X, y, ridge: float) -> float:
    return 0.5 * deviance(w, X, y) + 0.5 * ridge * float(w @ w)


def penalized_nll_grad(w, X, y, ridge: float) -> np.ndarray:
    return X.T @ (sigmoid(X @ w) - y) + ridge * w


@dataclass
class LogisticModel:
    coefficients: np.ndarray  # intercept first
    covariates: list[str]
    deviance: float
    converged: bool
    ridge: float = DEFAULT_RIDGE
    iterations: int = 0
    objective_trace: list[float] = field(default_factory=list)
    std_errors: np.ndarray | None = None

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(add_intercept(X) @ self.coefficients)

    @property
    def z_scores(self) -> np.ndarray:
        return self.coefficients / self.std_errors

    @property
    def p_values(self) -> np.ndarray:
        return np.array([math.erfc(abs(z) / math.sqrt(2.0)) for z in self.z_scores])


def fit_logistic(X, y, ridge: float = DEFAULT_RIDGE, covariates=None,
                 max_iter: int = 100, gtol: float = 1e-9,
                 step_tol: float = 1e-14) -> LogisticModel:
    """Penalised logistic regression by IRLS (Newton) with step halving.

    The L2 penalty ``ridge/2 * |w|^2`` covers the intercept too, so a constant
    response still has a finite optimum.
    """
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    Xd = add_intercept(X)
    y = np.asarray(y, dtype=float)
    if np.isnan(Xd).any():
        raise ValueError("design matrix contains NaN; drop invalid rows first")
    n, k = Xd.shape
    if covariates is None:
        covariates = [f"x{i}" for i in range(1, k)]
    covariates = ["intercept", *covariates]
    w = np.zeros(k)
    obj = penalized_nll(w, Xd, y, ridge)
    trace = [obj]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = sigmoid(Xd @ w)
        grad = Xd.T @ (p - y) + ridge * w
        if np.linalg.norm(grad) < gtol:
            converged = True
            break
        H = (Xd * (p * (1.0 - p))[:, None]).T @ Xd + ridge * np.eye(k)
        try:
            if ridge == 0.0 and np.linalg.cond(H) > 1e14:
                raise np.linalg.LinAlgError("ill-conditioned")
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            raise SeparationError(
                "singular weighted normal equations; data may be separable, use ridge > 0") from None
        t = 1.0
        while True:
            w_new = w - t * step
            obj_new = penalized_nll(w_new, Xd, y, ridge)
            if obj_new <= obj or t < 1e-10:
                break
            t *= 0.5
        # no descent left at machine precision: accept if the gradient is small
        # or the predicted decrease (half the Newton decrement) is below rounding
        at_floor = bool(np.linalg.norm(grad) < 1e-6
                        or 0.5 * float(grad @ step) <= 1e-12 * max(1.0, abs(obj)))
        if obj_new > obj:
            converged = at_floor
            break
        w, obj = w_new, obj_new
        trace.append(obj)
        if np.linalg.norm(t * step) <= step_tol * (1.0 + np.linalg.norm(w)):
            converged = at_floor
            break
    if ridge == 0.0 and (not converged or deviance(w, Xd, y) < 1e-6 * n):
        raise SeparationError("no finite MLE (separable data); use ridge > 0")
    p = sigmoid(Xd @ w)
    H = (Xd * (p * (1.0 - p))[:, None]).T @ Xd + ridge * np.eye(k)
    try:
        se = np.sqrt(np.diag(np.linalg.inv(H)))
    except np.linalg.LinAlgError:
        se = np.full(k, np.nan)
    return LogisticModel(w, covariates, deviance(w, Xd, y), converged, ridge, it, trace, se)


# ------------------------------------------------------------ split / ROC

def train_test_split(n_items: int, seed: int, train_fraction: float = 0.75):
    """Seeded shuffle of item indices; floor(0.75 n) go to training."""
    if n_items < 4:
        raise ValueError("need at least 4 items to split")
    perm = np.random.default_rng(seed).permutation(n_items)
    n_train = int(math.floor(train_fraction * n_items))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


def roc_auc(scores, y) -> RocCurve:
    """ROC over every distinct score (predict 1 iff score >= threshold) and trapezoid AUC."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(y).astype(int)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC needs both classes in y")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.r_[0, np.cumsum(y)[last]]
    fp = np.r_[0, np.cumsum(1 - y)[last]]
    thresholds = np.r_[np.inf, s[last]]
    # integer trapezoid sum, divided once
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    auc = twice_area / (2.0 * n_pos * n_neg)
    return RocCurve(fp / n_neg, tp / n_pos, thresholds, auc)


def binarize_angle_class(classes) -> np.ndarray:
    """1 iff the angle class is >= 1 (angle of 30 degrees or more).

    Accepts hard classes (n,) or class probabilities (n, 3); probabilities
    return P(class >= 1).
    """
    c = np.asarray(classes, dtype=float)
    if c.ndim == 2:
        return c[:, 1] + c[:, 2]
    out = (c >= 1).astype(float)
    out[np.isnan(c)] = np.nan
    return out


def kappa_threshold_sweep(angles, reference, theta_grid=DEFAULT_THETA_GRID):
    """Kappa of ``angle >= theta`` against reference labels for each theta.

    Cells with NaN angle or reference are skipped. Returns (curve, theta_star)
    where ties go to the smallest theta.
    """
    a = np.asarray(angles, dtype=float).ravel()
    r = np.asarray(reference, dtype=float).ravel()
    ok = ~(np.isnan(a) | np.isnan(r))
    a, r = a[ok], r[ok]
    curve = []
    for theta in np.asarray(theta_grid, dtype=float):
        if not 0.0 < theta < 180.0:
            raise ValueError(f"theta {theta} outside (0, 180)")
        try:
            k = cohen_kappa((a >= theta).astype(float), r)
        except UndefinedMetricError:
            k = float("nan")
        curve.append((float(theta), k))
    ks = np.array([k for _, k in curve])
    if np.all(np.isnan(ks)):
        return curve, float("nan")
    best = int(np.nanargmax(ks))
    return curve, curve[best][0]


# ------------------------------------------------------------ calibration run

@dataclass
class CalibrationReport:
    source: str
    model: LogisticModel
    roc: RocCurve
    kappa_curve: list[tuple[float, float]]
    theta_star: float
    kappa_star: float
    split_seed: int
    n_train: int
    n_test: int
    n_excluded: int
    label: str = "symmetry"
    stratified: bool = False

    @property
    def auc(self) -> float:
        return self.roc.auc

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "label": self.label,
            "auc": self.auc,
            "theta_star": self.theta_star,
            "kappa_star": self.kappa_star,
            "split_seed": self.split_seed,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "n_excluded_invalid": self.n_excluded,
            "stratified": self.stratified,
            "model": {
                "covariates": self.model.covariates,
                "coefficients": self.model.coefficients.tolist(),
                "deviance": self.model.deviance,
                "converged": self.model.converged,
                "ridge": self.model.ridge,
            },
            "roc_points": [[f, t, None if math.isinf(s) else s] for f, t, s in self.roc.points()],
            "kappa_curve": [[t, None if math.isnan(k) else k] for t, k in self.kappa_curve],
        }


def _design(angles, limb_index, stratified: bool):
    if not stratified:
        return angles[:, None], ["angle_deg"]
    cols, names = [], []
    for k, limb in enumerate(LIMBS):
        ind = (limb_index == k).astype(float)
        if k > 0:
            cols.append(ind)
            names.append(f"limb[{limb}]")
        cols.append(ind * angles)
        names.append(f"angle_deg:{limb}")
    return np.column_stack(cols), names


def calibrate(angles, labels, seed: int, source: str = "pose", limb_index=None,
              theta_grid=DEFAULT_THETA_GRID, ridge: float = DEFAULT_RIDGE,
              stratified: bool = False, label: str = "symmetry") -> CalibrationReport:
    """Regress labels on raw angles (3:1 split, ROC on the test part) and sweep theta.

    ``angles`` and ``labels`` are aligned per (image, limb) cell; NaN angles
    or labels are excluded and counted.
    """
    a = np.asarray(angles, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()
    if limb_index is None:
        limb_index = np.tile(np.arange(len(LIMBS)), a.size // len(LIMBS) + 1)[: a.size]
    limb_index = np.asarray(limb_index)
    ok = ~(np.isnan(a) | np.isnan(y))
    n_excluded = int((~ok).sum())
    if n_excluded:
        logger.info("%s: excluding %d cells with invalid angle or label", source, n_excluded)
    a_ok, y_ok, l_ok = a[ok], y[ok], limb_index[ok]
    train, test = train_test_split(a_ok.size, seed)
    X, names = _design(a_ok, l_ok, stratified)
    model = fit_logistic(X[train], y_ok[train], ridge=ridge, covariates=names)
    roc = roc_auc(model.predict_proba(X[test]), y_ok[test])
    curve, theta_star = kappa_threshold_sweep(a_ok, y_ok, theta_grid)
    kappa_star = dict(curve).get(theta_star, float("nan"))
    return CalibrationReport(source, model, roc, curve, theta_star, kappa_star, seed,
                             train.size, test.size, n_excluded, label, stratified)


def end_to_end_classifier(skeletons, theta: float):
    """Threshold each skeleton's four raw angles at a calibrated theta."""
    return [assess(angle_profile(sk), theta) for sk in skeletons]
