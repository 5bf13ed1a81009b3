"""Consensus labels and rater reliability from noisy multi-rater labels.

Each rater j is modelled by a sensitivity alpha_j = P(y=1 | z=1) and a
specificity beta_j = P(y=0 | z=0); the hidden label z has prevalence p.
Parameters get Beta priors and are fit by EM to the MAP estimate. Ordinal
labels are split into the binary problems ``label >= 1`` and ``label >= 2``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 500
MONOTONE_SLACK = 1e-9


class AggregationError(ValueError):
    pass


class ObjectiveDecreaseError(RuntimeError):
    """The MAP objective went down between EM iterations."""


@dataclass(frozen=True)
class BetaPrior:
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"Beta prior parameters must be positive, got ({self.a}, {self.b})")

    def swapped(self) -> BetaPrior:
        return BetaPrior(self.b, self.a)


@dataclass
class Priors:
    """Beta priors on sensitivity, specificity and prevalence.

    ``rater_sens`` / ``rater_spec`` optionally override the sensitivity and
    specificity priors for individual raters (keyed by rater position).
    """

    sens: BetaPrior = field(default_factory=lambda: BetaPrior(2.0, 1.0))
    spec: BetaPrior = field(default_factory=lambda: BetaPrior(2.0, 1.0))
    prev: BetaPrior = field(default_factory=BetaPrior)
    rater_sens: dict[int, BetaPrior] = field(default_factory=dict)
    rater_spec: dict[int, BetaPrior] = field(default_factory=dict)

    @classmethod
    def random(cls, seed: int, low: float = 1.0, high: float = 5.0) -> Priors:
        """Hyperparameters drawn once as Uniform[low, high]."""
        rng = np.random.default_rng(seed)
        draws = rng.uniform(low, high, size=6).tolist()
        return cls(BetaPrior(*draws[0:2]), BetaPrior(*draws[2:4]), BetaPrior(*draws[4:6]))

    def swapped(self) -> Priors:
        """Priors for the complemented labelling."""
        return Priors(self.spec, self.sens, self.prev.swapped(),
                      dict(self.rater_spec), dict(self.rater_sens))

    def rater_arrays(self, n_raters: int):
        sa = np.array([self.rater_sens.get(j, self.sens).a for j in range(n_raters)])
        sb = np.array([self.rater_sens.get(j, self.sens).b for j in range(n_raters)])
        ca = np.array([self.rater_spec.get(j, self.spec).a for j in range(n_raters)])
        cb = np.array([self.rater_spec.get(j, self.spec).b for j in range(n_raters)])
        return sa, sb, ca, cb

    def to_dict(self) -> dict:
        return {"sens": [self.sens.a, self.sens.b], "spec": [self.spec.a, self.spec.b],
                "prev": [self.prev.a, self.prev.b]}


@dataclass
class RaterProfile:
    rater_id: str
    sensitivity: float
    specificity: float


@dataclass
class AggregationResult:
    posteriors: np.ndarray
    prevalence: float
    profiles: list[RaterProfile]
    iterations: int
    converged: bool
    objective_trace: list[float] = field(default_factory=list)
    limb_results: list[AggregationResult] = field(default_factory=list)  # per-limb runs, if any

    @property
    def hard_labels(self) -> np.ndarray:
        return (self.posteriors >= 0.5).astype(int)


@dataclass
class OrdinalAggregationResult:
    class_probs: np.ndarray  # (n_items, 3)
    sub_results: tuple[AggregationResult, AggregationResult]

    @property
    def hard_class(self) -> np.ndarray:
        return np.argmax(self.class_probs, axis=1)


def _as_label_matrix(labels) -> np.ndarray:
    """Float (raters, items) matrix with NaN for missing; -1 is also missing."""
    y = np.array(labels, dtype=float)
    if y.ndim != 2:
        raise AggregationError("labels must be a raters x items matrix")
    y[y < 0] = np.nan
    return y


def majority_init(labels) -> np.ndarray:
    """Fraction of available labels equal to 1, per item."""
    y = _as_label_matrix(labels)
    counts = np.sum(~np.isnan(y), axis=0)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise AggregationError(f"items with no labels: {empty.tolist()}")
    return np.nansum(y, axis=0) / counts


def _rater_sum(contrib: np.ndarray) -> np.ndarray:
    # sort before summing over raters so the result ignores rater order bit-for-bit
    return np.sort(contrib, axis=0).sum(axis=0)


def _m_step(y, obs, mu, prior_arrays, prev: BetaPrior):
    sa, sb, ca, cb = prior_arrays
    y0 = np.where(obs, y, 0.0)
    mu_obs = obs * mu
    nu_obs = obs * (1.0 - mu)
    alpha = (sa - 1.0 + (mu_obs * y0).sum(axis=1)) / (sa + sb - 2.0 + mu_obs.sum(axis=1))
    beta = (ca - 1.0 + (nu_obs * (1.0 - y0)).sum(axis=1)) / (ca + cb - 2.0 + nu_obs.sum(axis=1))
    p = (prev.a - 1.0 + mu.sum()) / (prev.a + prev.b - 2.0 + mu.shape[0])
    return alpha, beta, p


def _log_terms(y, obs, alpha, beta):
    """Per-item log P(labels | z=1) and log P(labels | z=0)."""
    y0 = np.where(obs, y, 0.0)
    a = alpha[:, None]
    b = beta[:, None]
    la = np.where(obs, xlogy(y0, a) + xlogy(1.0 - y0, 1.0 - a), 0.0)
    lb = np.where(obs, xlogy(y0, 1.0 - b) + xlogy(1.0 - y0, b), 0.0)
    return _rater_sum(la), _rater_sum(lb)


def _e_step(y, obs, alpha, beta, p):
    la, lb = _log_terms(y, obs, alpha, beta)
    with np.errstate(divide="ignore", invalid="ignore"):
        l1 = la + np.log(p)
        l0 = lb + np.log1p(-p)
        mu = np.exp(l1 - np.logaddexp(l1, l0))
    # both hypotheses impossible only with contradictory boundary parameters
    return np.where(np.isnan(mu), 0.5, mu)


def log_posterior(labels, alpha, beta, p, priors: Priors | None = None) -> float:
    """MAP objective: marginal log-likelihood plus log Beta prior densities (unnormalised)."""
    priors = priors or Priors()
    y = _as_label_matrix(labels)
    obs = ~np.isnan(y)
    sa, sb, ca, cb = priors.rater_arrays(y.shape[0])
    la, lb = _log_terms(y, obs, alpha, beta)
    with np.errstate(divide="ignore"):
        ll = np.logaddexp(la + np.log(p), lb + np.log1p(-p)).sum()
    lp = _rater_sum(np.stack([
        xlogy(sa - 1.0, alpha), xlogy(sb - 1.0, 1.0 - alpha),
        xlogy(ca - 1.0, beta), xlogy(cb - 1.0, 1.0 - beta),
    ])).sum()
    lp += xlogy(priors.prev.a - 1.0, p) + xlogy(priors.prev.b - 1.0, 1.0 - p)
    return float(ll + lp)


def em_binary(labels, priors: Priors | None = None, tol: float = DEFAULT_TOL,
              max_iter: int = DEFAULT_MAX_ITER, seed: int | None = None,
              rater_ids=None, check_monotone: bool = True) -> AggregationResult:
    """MAP estimate of hidden binary labels and rater sensitivity/specificity.

    ``labels`` is a raters x items matrix with NaN (or -1) for missing cells.
    Parameters start from one M-step against the soft majority vote. Iteration
    stops once the largest absolute parameter change drops below ``tol``.
    ``seed`` only matters for ``priors="random"``.
    """
    if isinstance(priors, str):
        if priors != "random":
            raise ValueError(f"unknown priors mode {priors!r}")
        priors = Priors.random(0 if seed is None else seed)
    priors = priors or Priors()
    y = _as_label_matrix(labels)
    if rater_ids is None:
        rater_ids = [f"r{j:02d}" for j in range(y.shape[0])]
    rater_ids = list(rater_ids)

    obs = ~np.isnan(y)
    keep = obs.any(axis=1)
    if not keep.all():
        dropped = [rater_ids[j] for j in np.flatnonzero(~keep)]
        warnings.warn(f"dropping raters with no observed labels: {dropped}", stacklevel=2)
        kept_idx = np.flatnonzero(keep)
        remap = {int(old): new for new, old in enumerate(kept_idx)}
        priors = Priors(priors.sens, priors.spec, priors.prev,
                        {remap[k]: v for k, v in priors.rater_sens.items() if k in remap},
                        {remap[k]: v for k, v in priors.rater_spec.items() if k in remap})
        y, obs = y[keep], obs[keep]
        rater_ids = [rater_ids[j] for j in kept_idx]
    if y.shape[0] < 2:
        raise AggregationError("need at least 2 raters with observed labels")
    if y.shape[1] < 1:
        raise AggregationError("need at least 1 item")

    prior_arrays = priors.rater_arrays(y.shape[0])
    mu = majority_init(y)
    params = None
    trace: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        alpha, beta, p = _m_step(y, obs, mu, prior_arrays, priors.prev)
        new_params = np.concatenate([alpha, beta, [p]])
        obj = log_posterior(y, alpha, beta, p, priors)
        if check_monotone and trace and obj < trace[-1] - MONOTONE_SLACK * max(1.0, abs(trace[-1])):
            raise ObjectiveDecreaseError(
                f"log-posterior decreased at iteration {it}: {trace[-1]!r} -> {obj!r}")
        trace.append(obj)
        mu = _e_step(y, obs, alpha, beta, p)
        if params is not None and np.max(np.abs(new_params - params)) < tol:
            converged = True
            break
        params = new_params
    if not converged:
        logger.warning("EM did not converge within %d iterations", max_iter)
    profiles = [RaterProfile(r, float(a), float(b)) for r, a, b in zip(rater_ids, alpha, beta)]
    return AggregationResult(mu, float(p), profiles, it, converged, trace)


def combine_ordinal(q1, q2) -> np.ndarray:
    """Class probabilities from P(class >= 1) and P(class >= 2).

    A negative middle mass (q2 > q1) is clamped to zero and the triple
    renormalised.
    """
    q1 = np.atleast_1d(np.asarray(q1, dtype=float))
    q2 = np.atleast_1d(np.asarray(q2, dtype=float))
    probs = np.stack([1.0 - q1, q1 - q2, q2], axis=1)
    bad = probs[:, 1] < 0
    if bad.any():
        probs[bad, 1] = 0.0
        probs[bad] /= probs[bad].sum(axis=1, keepdims=True)
    return probs


def em_ordinal(labels, priors: Priors | None = None, tol: float = DEFAULT_TOL,
               max_iter: int = DEFAULT_MAX_ITER, seed: int | None = None,
               rater_ids=None) -> OrdinalAggregationResult:
    y = _as_label_matrix(labels)
    bad = ~np.isnan(y) & ~np.isin(y, (0.0, 1.0, 2.0))
    if bad.any():
        raise AggregationError("ordinal labels must be in {0, 1, 2}")
    with np.errstate(invalid="ignore"):
        z1 = np.where(np.isnan(y), np.nan, (y >= 1).astype(float))
        z2 = np.where(np.isnan(y), np.nan, (y >= 2).astype(float))
    r1 = em_binary(z1, priors, tol, max_iter, seed, rater_ids)
    r2 = em_binary(z2, priors, tol, max_iter, seed, rater_ids)
    return OrdinalAggregationResult(combine_ordinal(r1.posteriors, r2.posteriors), (r1, r2))


@dataclass
class RaterMetrics:
    rater_id: str
    n: int
    sensitivity: float
    specificity: float
    accuracy: float
    kappa: float


def rater_report(result: AggregationResult, labels, rater_ids=None) -> list[RaterMetrics]:
    """Each rater scored against the hard consensus as ground truth."""
    from .agreement import UndefinedMetricError, cohen_kappa

    y = _as_label_matrix(labels)
    truth = result.hard_labels
    if rater_ids is None:
        rater_ids = [p.rater_id for p in result.profiles] if len(result.profiles) == y.shape[0] \
            else [f"r{j:02d}" for j in range(y.shape[0])]
    rows = []
    for rid, row in zip(rater_ids, y):
        obs = ~np.isnan(row)
        r, t = row[obs], truth[obs]
        pos, neg = t == 1, t == 0
        sens = float(np.mean(r[pos] == 1)) if pos.any() else float("nan")
        spec = float(np.mean(r[neg] == 0)) if neg.any() else float("nan")
        acc = float(np.mean(r == t)) if obs.any() else float("nan")
        try:
            kappa = cohen_kappa(r, t)
        except UndefinedMetricError:
            kappa = float("nan")
        rows.append(RaterMetrics(rid, int(obs.sum()), sens, spec, acc, kappa))
    return rows


def aggregate_table(labels, priors: Priors | None = None, per_limb: bool = False,
                    n_limbs: int = 4, ordinal: bool = False, **kw):
    """Run EM over all items at once, or separately for each limb pair.

    Items are assumed laid out image-major, limb-minor. With ``per_limb`` the
    per-limb posteriors are stitched back into item order; profiles and
    iteration counts come from the first limb's run, and every limb's own
    result is kept in ``limb_results``.
    """
    run = em_ordinal if ordinal else em_binary
    if not per_limb:
        return run(labels, priors, **kw)
    y = _as_label_matrix(labels)
    parts = [run(y[:, k::n_limbs], priors, **kw) for k in range(n_limbs)]
    if ordinal:
        probs = np.empty((y.shape[1], 3))
        for k, part in enumerate(parts):
            probs[k::n_limbs] = part.class_probs
        return OrdinalAggregationResult(probs, parts[0].sub_results)
    mu = np.empty(y.shape[1])
    for k, part in enumerate(parts):
        mu[k::n_limbs] = part.posteriors
    first = parts[0]
    return AggregationResult(mu, first.prevalence, first.profiles,
                             max(p.iterations for p in parts),
                             all(p.converged for p in parts), first.objective_trace, parts)
