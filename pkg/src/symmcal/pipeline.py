"""End-to-end run: angles, consensus, agreement, calibration and factor reports from one config."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tables
from .aggregation import BetaPrior, Priors, aggregate_table, majority_init, rater_report
from .agreement import LabelSource, agreement_report
from .calibration import DEFAULT_RIDGE, binarize_angle_class, calibrate
from .factors import ANGLE_COLLAPSE, build_design, factor_analysis, human_angle_rows
from .geometry import angle_classes, angle_profile, profiles_matrix
from .skeleton import LIMBS, DataValidationError, load_keypoints, load_occlusion, load_ratings

logger = logging.getLogger(__name__)


class ConfigError(DataValidationError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def sub_seed(master: int, name: str) -> int:
    """Named seed derived from the master seed."""
    digest = hashlib.sha256(f"{master}/{name}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


@dataclass
class SourceConfig:
    name: str
    keypoints: Path
    dim: int


@dataclass
class PipelineConfig:
    seed: int
    sources: list[SourceConfig]
    ratings: Path | None = None
    occlusion: Path | None = None
    priors: Priors | str = field(default_factory=Priors)
    em_tol: float = 1e-6
    em_max_iter: int = 500
    per_limb: bool = False
    theta_grid: np.ndarray = field(default_factory=lambda: np.arange(1.0, 91.0, 1.0))
    hist_bin: float = 5.0
    ridge: float = DEFAULT_RIDGE
    stratified: bool = False
    factor_source: str | None = None
    angle_collapse: str = "mean"
    alpha_metric: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()


def _prior(v, default: BetaPrior) -> BetaPrior:
    if v is None:
        return default
    if len(v) != 2:
        raise ConfigError(f"prior must be [a, b], got {v!r}")
    return BetaPrior(float(v[0]), float(v[1]))


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    base = path.parent

    def resolve(p):
        return None if p is None else (base / p).resolve()

    try:
        sources = [SourceConfig(name, resolve(s["keypoints"]), int(s.get("dim", 3)))
                   for name, s in raw["sources"].items()]
    except (KeyError, TypeError, AttributeError) as exc:
        raise ConfigError(f"config 'sources' must map names to {{keypoints, dim}}: {exc}") from None
    for s in sources:
        if s.dim not in (2, 3):
            raise ConfigError(f"source {s.name!r}: dim must be 2 or 3, got {s.dim}")
    if not sources:
        raise ConfigError("config needs at least one pose source")
    pr = raw.get("priors")
    if pr == "random":
        priors: Priors | str = "random"
    else:
        pr = pr or {}
        d = Priors()
        priors = Priors(_prior(pr.get("sens"), d.sens), _prior(pr.get("spec"), d.spec),
                        _prior(pr.get("prev"), d.prev))
    em = raw.get("em", {})
    grid = raw.get("theta_grid", {})
    theta_grid = np.arange(float(grid.get("start", 1.0)), float(grid.get("stop", 90.0)) + 1e-9,
                           float(grid.get("step", 1.0)))
    factor_source = raw.get("factor_source")
    if factor_source is not None and factor_source not in {s.name for s in sources}:
        raise ConfigError(f"factor_source {factor_source!r} is not a configured source")
    collapse = raw.get("factor_angle_collapse", "mean")
    if collapse not in ANGLE_COLLAPSE:
        raise ConfigError(f"factor_angle_collapse must be one of {ANGLE_COLLAPSE}, got {collapse!r}")
    return PipelineConfig(
        seed=int(raw.get("seed", 0)), sources=sources,
        ratings=resolve(raw.get("ratings")), occlusion=resolve(raw.get("occlusion")),
        priors=priors, em_tol=float(em.get("tol", 1e-6)), em_max_iter=int(em.get("max_iter", 500)),
        per_limb=bool(em.get("per_limb", False)), theta_grid=theta_grid,
        hist_bin=float(raw.get("hist_bin", 5.0)), ridge=float(raw.get("ridge", DEFAULT_RIDGE)),
        stratified=bool(raw.get("stratified", False)), factor_source=factor_source, angle_collapse=collapse,
        alpha_metric=dict(raw.get("krippendorff_metric", {})), raw=raw,
    )


def _align(lookup: dict, images, default=np.nan) -> np.ndarray:
    return np.array([[lookup.get((img, limb), default) for limb in LIMBS] for img in images],
                    dtype=float)


class _Run:
    def __init__(self, cfg: PipelineConfig, out_dir):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.seeds: dict[str, int] = {}
        self.files: list[str] = []
        self.notices: list[str] = []
        self.meta = {"config_hash": cfg.config_hash, "master_seed": cfg.seed}

    def seed(self, name: str) -> int:
        self.seeds[name] = sub_seed(self.cfg.seed, name)
        return self.seeds[name]

    def path(self, rel: str) -> Path:
        self.files.append(rel)
        return self.out / rel

    def json(self, rel: str, obj: dict, seeds=()):
        obj = {**obj, "meta": {**self.meta, "seeds": {s: self.seeds[s] for s in seeds}}}
        tables.dump_json(obj, self.path(rel))

    def notice(self, msg: str):
        logger.info(msg)
        self.notices.append(msg)

    def stage(self, name, fn, *args):
        logger.info("stage %s", name)
        try:
            return fn(*args)
        except DataValidationError:
            raise
        except Exception as exc:  # noqa: BLE001 - reported with the stage name
            raise StageError(name, exc) from exc


def run_pipeline(config, out_dir) -> dict:
    """Run every stage the config supports and write the bundle to ``out_dir``.

    Returns the manifest. Stages needing ratings are skipped, with a notice,
    when no ratings file is configured.
    """
    cfg = config if isinstance(config, PipelineConfig) else load_config(config)
    run = _Run(cfg, out_dir)
    try:
        return _stages(cfg, run)
    except StageError as exc:
        run.notice(f"aborted in stage {exc.stage!r}; outputs so far kept")
        _finish(run)
        raise


def _stages(cfg: PipelineConfig, run: _Run) -> dict:
    # angles
    skeletons, angles = {}, {}
    for src in cfg.sources:
        sks = run.stage("angles", load_keypoints, src.keypoints, src.dim)
        skeletons[src.name] = {sk.image_id: sk for sk in sks}
        profs = [angle_profile(sk) for sk in sks]
        angles[src.name] = {(p.image_id, limb): p.angles[limb] for p in profs for limb in LIMBS}
        tables.write_angles(profs, run.path(f"angles/{src.name}.csv"))
        tables.write_histogram(profiles_matrix(profs), run.path(f"histograms/{src.name}.csv"),
                               cfg.hist_bin)

    if cfg.ratings is None:
        run.notice("no ratings configured: aggregation, agreement, calibration and factors skipped")
        return _finish(run)

    table = run.stage("aggregation", load_ratings, cfg.ratings)
    if table.n_raters < 2:
        run.notice("fewer than 2 raters: downstream stages skipped")
        return _finish(run)
    items = table.items

    def aggregate():
        s_sym, s_ang = run.seed("em:symmetry"), run.seed("em:angle_class")
        kw = dict(tol=cfg.em_tol, max_iter=cfg.em_max_iter)
        sym = aggregate_table(table.as_float("symmetry"), cfg.priors, cfg.per_limb,
                              seed=s_sym, rater_ids=table.raters, **kw)
        ang = aggregate_table(table.as_float("angle_class"), cfg.priors, cfg.per_limb,
                              ordinal=True, seed=s_ang, rater_ids=table.raters, **kw)
        tables.write_consensus(items, run.path("consensus/symmetry.csv"), posterior=sym.posteriors)
        tables.write_consensus(items, run.path("consensus/angle_class.csv"), class_probs=ang.class_probs)
        tables.write_rater_report(rater_report(sym, table.as_float("symmetry"), table.raters),
                                  run.path("consensus/rater_report.csv"))
        def summary(r):
            return {
                "prevalence": r.prevalence, "iterations": r.iterations, "converged": r.converged,
                "objective_trace": r.objective_trace,
                "profiles": [{"rater_id": p.rater_id, "sensitivity": p.sensitivity,
                              "specificity": p.specificity} for p in r.profiles],
            }

        model = summary(sym) if not cfg.per_limb else {
            "converged": sym.converged,
            "limbs": {limb: summary(r) for limb, r in zip(LIMBS, sym.limb_results)},
        }
        model.update(per_limb=cfg.per_limb,
                     priors=(Priors.random(s_sym) if cfg.priors == "random" else cfg.priors).to_dict(),
                     random_priors=cfg.priors == "random")
        run.json("consensus/symmetry_model.json", model, seeds=("em:symmetry",))
        return sym, ang

    sym, ang = run.stage("aggregation", aggregate)
    bayes_sym = sym.hard_labels.astype(float)
    bayes_ang = ang.hard_class.astype(float)
    shape = (len(table.images), len(LIMBS))

    def calibrate_all():
        rows, reports = [], {}
        for src in cfg.sources:
            a = _align(angles[src.name], table.images).ravel()
            reps = {}
            for label, target in (("symmetry", bayes_sym), ("angle_class", binarize_angle_class(bayes_ang))):
                seed = run.seed(f"split:{src.name}:{label}")
                rep = calibrate(a, target, seed, src.name, theta_grid=cfg.theta_grid,
                                ridge=cfg.ridge, stratified=cfg.stratified, label=label)
                run.json(f"calibration/{src.name}_{label}.json", rep.to_dict(),
                         seeds=(f"split:{src.name}:{label}",))
                tables.write_roc(rep.roc, run.path(f"roc/{src.name}_{label}.csv"))
                reps[label] = rep
            tables.write_kappa_curve(reps["symmetry"].kappa_curve, run.path(f"kappa/{src.name}.csv"))
            reports[src.name] = reps
            rows.append([src.name, tables.fmt(reps["symmetry"].auc), tables.fmt(reps["angle_class"].auc),
                         tables.fmt(reps["symmetry"].theta_star), tables.fmt(reps["symmetry"].kappa_star)])
        fh, w = tables._writer(run.path("estimators.csv"))
        with fh:
            w.writerow(["source", "auc_symmetry", "auc_angle_class", "theta_star", "kappa_star"])
            w.writerows(rows)
        return reports

    reports = run.stage("calibration", calibrate_all)

    def agreement():
        voted = (majority_init(table.as_float("symmetry")) >= 0.5).astype(float)
        with np.errstate(invalid="ignore"):
            voted_ang = np.round(np.nanmedian(table.as_float("angle_class"), axis=0))
        extra = [
            LabelSource("voted", voted.reshape(shape), voted_ang.reshape(shape)),
            LabelSource("bayesian", bayes_sym.reshape(shape), bayes_ang.reshape(shape)),
        ]
        for src in cfg.sources:
            a = _align(angles[src.name], table.images)
            theta = reports[src.name]["symmetry"].theta_star
            with np.errstate(invalid="ignore"):
                lab = np.where(np.isnan(a), np.nan, (a >= theta).astype(float))
            extra.append(LabelSource(src.name, lab, angle_classes(a)))
        rep = agreement_report(table, extra, cfg.alpha_metric or None)
        run.json("agreement.json", rep.to_dict())

    run.stage("agreement", agreement)

    if cfg.occlusion is None:
        run.notice("no occlusion labels configured: factor analysis skipped")
        return _finish(run)

    def factors():
        occ = load_occlusion(cfg.occlusion)
        fsrc = cfg.factor_source or cfg.sources[0].name
        sks = skeletons[fsrc]
        posture = np.repeat([sks[i].posture if i in sks else "unknown" for i in table.images], len(LIMBS))
        limb = np.tile(LIMBS, len(table.images))
        occl = _align({k: float(v) for k, v in occ.items()}, table.images).ravel()
        *rows, name, note = human_angle_rows(bayes_sym, limb, posture, occl,
                                             table.as_float("angle_class"), cfg.angle_collapse)
        design = build_design(*rows, name)
        rep = factor_analysis(design, cfg.ridge, {
            "response": "bayesian", "angle_source": "human raters",
            "angle_collapse": note, "posture_source": fsrc})
        run.json("factors/bayesian.json", rep.to_dict())

        pose_a = _align(angles[fsrc], table.images).ravel()
        theta = reports[fsrc]["symmetry"].theta_star
        with np.errstate(invalid="ignore"):
            pose_y = np.where(np.isnan(pose_a), np.nan, (pose_a >= theta).astype(float))
        design = build_design(pose_y, limb, posture, occl, pose_a / 30.0, "angle_deg/30")
        rep = factor_analysis(design, cfg.ridge, {
            "response": f"pose assessment ({fsrc}, theta={theta})", "angle_source": fsrc,
            "angle_scaling": "degrees / 30", "posture_source": fsrc})
        run.json("factors/pose3d.json", rep.to_dict())

    run.stage("factors", factors)
    return _finish(run)


def _finish(run: _Run) -> dict:
    files = {}
    for rel in sorted(set(run.files)):
        f = run.out / rel
        if f.exists():  # a write interrupted by a stage failure leaves nothing to stamp
            files[rel] = hashlib.sha256(f.read_bytes()).hexdigest()
    manifest = {
        "config_hash": run.cfg.config_hash,
        "master_seed": run.cfg.seed,
        "seeds": dict(sorted(run.seeds.items())),
        "files": files,
        "notices": run.notices,
    }
    tables.dump_json(manifest, run.out / "manifest.json")
    return manifest
