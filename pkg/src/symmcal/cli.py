"""``symmcal`` command line: angles, aggregate, agreement, calibrate, classify, factors, simulate, run."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import tables
from .aggregation import BetaPrior, Priors, aggregate_table, rater_report
from .agreement import LabelSource, agreement_report
from .calibration import DEFAULT_RIDGE, calibrate, end_to_end_classifier
from .factors import ANGLE_COLLAPSE, build_design, factor_analysis, human_angle_rows
from .geometry import angle_classes, angle_profile, profiles_matrix
from .pipeline import ConfigError, StageError, run_pipeline
from .skeleton import (
    LIMBS, DataValidationError, load_keypoints, load_occlusion, load_ratings, save_keypoints,
    save_occlusion, save_ratings,
)
from .synthetic import RaterSpec, SynthSpec, make_dataset, simulate_raters

EXIT_VALIDATION = 2
EXIT_STAGE = 3


def _prior_arg(text: str) -> BetaPrior:
    try:
        a, b = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a,b got {text!r}") from None
    return BetaPrior(a, b)


def _theta_arg(text: str) -> float:
    """A number, or a calibration JSON whose theta_star is used."""
    try:
        return float(text)
    except ValueError:
        pass
    try:
        return float(json.loads(Path(text).read_text())["theta_star"])
    except (OSError, KeyError, json.JSONDecodeError, TypeError) as exc:
        raise DataValidationError(f"--theta: not a number or calibration JSON ({exc})") from None


def cmd_angles(args):
    sks = load_keypoints(args.keypoints, args.dim)
    profs = [angle_profile(sk) for sk in sks]
    tables.write_angles(profs, args.out, args.threshold)
    if args.hist:
        tables.write_histogram(profiles_matrix(profs), args.hist, args.bin_width)


def cmd_aggregate(args):
    table = load_ratings(args.ratings)
    d = Priors()
    priors = "random" if args.random_priors else Priors(
        args.prior_sens or d.sens, args.prior_spec or d.spec, args.prior_prev or d.prev)
    kind = "symmetry" if args.label == "symmetry" else "angle_class"
    kw = dict(tol=args.tol, max_iter=args.max_iter, seed=args.seed, rater_ids=table.raters)
    if args.label == "symmetry":
        res = aggregate_table(table.as_float(kind), priors, args.per_limb, **kw)
        tables.write_consensus(table.items, args.out, posterior=res.posteriors)
        if args.rater_report:
            tables.write_rater_report(rater_report(res, table.as_float(kind), table.raters),
                                      args.rater_report)
    else:
        res = aggregate_table(table.as_float(kind), priors, args.per_limb, ordinal=True, **kw)
        tables.write_consensus(table.items, args.out, class_probs=res.class_probs)
        if args.rater_report:
            sub = res.sub_results[0]
            z1 = np.where(np.isnan(table.as_float(kind)), np.nan, table.as_float(kind) >= 1)
            tables.write_rater_report(rater_report(sub, z1, table.raters), args.rater_report)


def _assessment_source(path: str, images) -> LabelSource:
    """Angles CSV (optionally with a symmetry column) as an extra labeler."""
    sym, ang = {}, {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            key = (r["image_id"], r["limb"])
            if r.get("symmetry", "") != "":
                sym[key] = float(r["symmetry"])
            if r.get("valid", "1") not in ("0", "") and r.get("angle_deg", "") != "":
                ang[key] = float(r["angle_deg"])

    grid_s = np.array([[sym.get((i, l), np.nan) for l in LIMBS] for i in images])
    grid_a = np.array([[ang.get((i, l), np.nan) for l in LIMBS] for i in images])
    return LabelSource(Path(path).stem, grid_s, angle_classes(grid_a))


def cmd_agreement(args):
    table = load_ratings(args.ratings)
    sources = [_assessment_source(p, table.images) for p in args.assessments or []]
    metric = {"angle_class": args.angle_metric}
    rep = agreement_report(table, sources, metric)
    tables.dump_json(rep.to_dict(), args.out)


def _joined(angles: dict, consensus: dict):
    keys = [k for k in consensus if k in angles]
    if not keys:
        raise DataValidationError("angles and consensus files share no (image_id, limb) cells")
    a = np.array([angles[k] for k in keys])
    y = np.array([tables.consensus_binary(consensus[k]) for k in keys])
    limb = np.array([LIMBS.index(k[1]) for k in keys])
    return keys, a, y, limb


def cmd_calibrate(args):
    angles = tables.read_angles(args.angles)
    consensus = tables.read_consensus(args.consensus)
    _, a, y, limb = _joined(angles, consensus)
    grid = np.arange(args.theta_min, args.theta_max + 1e-9, args.theta_step)
    label = "angle_class" if "P0" in next(iter(consensus.values())) else "symmetry"
    rep = calibrate(a, y, args.seed, Path(args.angles).stem, limb_index=limb, theta_grid=grid,
                    ridge=args.ridge, stratified=args.stratified, label=label)
    tables.dump_json(rep.to_dict(), args.out)
    if args.roc_csv:
        tables.write_roc(rep.roc, args.roc_csv)
    if args.kappa_csv:
        tables.write_kappa_curve(rep.kappa_curve, args.kappa_csv)


def cmd_classify(args):
    theta = _theta_arg(args.theta)
    sks = load_keypoints(args.keypoints, args.dim)
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w", newline="")

    w = csv.writer(out, lineterminator="\n")
    w.writerow(["image_id", "limb", "angle_deg", "valid", "symmetry", "label"])
    for a in end_to_end_classifier(sks, theta):
        codes = a.as_binary()
        for k, limb in enumerate(LIMBS):
            valid = not np.isnan(codes[k])
            w.writerow([a.image_id, limb, tables.fmt(a.angles[limb]), int(valid),
                        int(codes[k]) if valid else "", a.labels[limb]])
    if out is not sys.stdout:
        out.close()


def cmd_factors(args):
    consensus = tables.read_consensus(args.consensus)
    table = load_ratings(args.ratings)
    angles = tables.read_angles(args.angles)
    occ = load_occlusion(args.occlusion)
    sks = {sk.image_id: sk for sk in load_keypoints(args.postures, args.dim)}
    keys = table.items
    limb = np.array([k[1] for k in keys])
    posture = np.array([sks[k[0]].posture if k[0] in sks else "unknown" for k in keys])
    occl = np.array([float(occ[k]) if k in occ else np.nan for k in keys])
    pose_a = np.array([angles.get(k, np.nan) for k in keys])
    angle_source = args.angle_source or ("human" if args.response == "bayesian" else "pose")
    if args.response == "bayesian":
        y = np.array([tables.consensus_binary(consensus[k]) if k in consensus else np.nan for k in keys])
        resp_desc = "bayesian consensus"
    else:
        if args.theta is None:
            raise DataValidationError("--response pose3d needs --theta")
        theta = _theta_arg(args.theta)
        with np.errstate(invalid="ignore"):
            y = np.where(np.isnan(pose_a), np.nan, (pose_a >= theta).astype(float))
        resp_desc = f"pose assessment at theta={theta}"
    if angle_source == "human":
        y, limb, posture, occl, ang, name, note = human_angle_rows(
            y, limb, posture, occl, table.as_float("angle_class"), args.angle_collapse)
        meta = {"angle_collapse": note}
    else:
        ang, name, meta = pose_a / 30.0, "angle_deg/30", {"angle_scaling": "degrees / 30"}
    design = build_design(y, limb, posture, occl, ang, name)
    rep = factor_analysis(design, args.ridge, {"response": resp_desc, "angle_source": angle_source, **meta})
    tables.dump_json(rep.to_dict(), args.out)


def _rater_spec(d: dict, seed: int) -> RaterSpec:
    return RaterSpec(
        n_raters=int(d.get("n_raters", 10)), sensitivity=d.get("sensitivity"),
        specificity=d.get("specificity"), sens_range=tuple(d.get("sens_range", (0.6, 0.95))),
        spec_range=tuple(d.get("spec_range", (0.6, 0.95))), angle_confusion=d.get("angle_confusion"),
        angle_accuracy_range=tuple(d.get("angle_accuracy_range", (0.5, 0.9))),
        missing_rate=float(d.get("missing_rate", 0.0)), seed=int(d.get("seed", seed + 1)),
    )


def simulate_from_spec(spec: dict):
    """Skeletons, truth grid, rating table and occlusion labels from a simulation spec dict."""

    seed = int(spec.get("seed", 0))
    synth = SynthSpec(n_images=int(spec.get("n_images", 100)), dim=int(spec.get("dim", 3)),
                      targets=spec.get("targets"), angle_sd=float(spec.get("angle_sd", 30.0)),
                      rigid=bool(spec.get("rigid", True)), seed=seed)
    sks, truth = make_dataset(synth)
    theta_true = float(spec.get("theta_true", 30.0))
    true_sym = (truth >= theta_true).astype(int)
    true_cls = angle_classes(truth).astype(int)
    images = [sk.image_id for sk in sks]
    table = simulate_raters(images, true_sym, _rater_spec(spec.get("raters", {}), seed), true_cls)
    rng = np.random.default_rng([seed, 2])
    occ_rate = float(spec.get("occlusion_rate", 0.1))
    occ = {(img, limb): bool(rng.random() < occ_rate) for img in images for limb in LIMBS}
    return sks, truth, true_sym, true_cls, table, occ


def cmd_simulate(args):
    try:
        spec = json.loads(Path(args.spec).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataValidationError(f"cannot read simulation spec: {exc}") from None
    sks, truth, true_sym, true_cls, table, occ = simulate_from_spec(spec)
    save_keypoints(sks, args.out_keypoints)
    save_ratings(table, args.out_ratings)
    with open(args.out_truth, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "limb", "angle_deg", "symmetry", "angle_class"])
        for i, sk in enumerate(sks):
            for k, limb in enumerate(LIMBS):
                w.writerow([sk.image_id, limb, tables.fmt(truth[i, k]), int(true_sym[i, k]),
                            int(true_cls[i, k])])
    if args.out_occlusion:
        save_occlusion(occ, args.out_occlusion)


def cmd_run(args):
    manifest = run_pipeline(args.config, args.out_dir)
    for note in manifest["notices"]:
        print(f"notice: {note}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="symmcal", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("angles", help="limb-pair angle differences from keypoints")
    s.add_argument("--keypoints", required=True)
    s.add_argument("--dim", type=int, choices=(2, 3), required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float)
    s.add_argument("--hist")
    s.add_argument("--bin-width", type=float, default=5.0)
    s.set_defaults(fn=cmd_angles)

    s = sub.add_parser("aggregate", help="EM consensus from multi-rater labels")
    s.add_argument("--ratings", required=True)
    s.add_argument("--label", choices=("symmetry", "angle"), default="symmetry")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--prior-sens", type=_prior_arg)
    s.add_argument("--prior-spec", type=_prior_arg)
    s.add_argument("--prior-prev", type=_prior_arg)
    s.add_argument("--random-priors", action="store_true",
                   help="draw Beta hyperparameters from Uniform[1,5] using --seed")
    s.add_argument("--per-limb", action="store_true", help="separate rater profiles per limb pair")
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iter", type=int, default=500)
    s.add_argument("--out", required=True)
    s.add_argument("--rater-report")
    s.set_defaults(fn=cmd_aggregate)

    s = sub.add_parser("agreement", help="kappa / alpha / inter-limb / consistency report")
    s.add_argument("--ratings", required=True)
    s.add_argument("--assessments", nargs="*")
    s.add_argument("--angle-metric", choices=("nominal", "ordinal"), default="nominal")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_agreement)

    s = sub.add_parser("calibrate", help="logistic ROC and kappa-optimal threshold")
    s.add_argument("--angles", required=True)
    s.add_argument("--consensus", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--roc-csv")
    s.add_argument("--kappa-csv")
    s.add_argument("--ridge", type=float, default=DEFAULT_RIDGE)
    s.add_argument("--stratified", action="store_true", help="per-limb intercept and slope")
    s.add_argument("--theta-min", type=float, default=1.0)
    s.add_argument("--theta-max", type=float, default=90.0)
    s.add_argument("--theta-step", type=float, default=1.0)
    s.set_defaults(fn=cmd_calibrate)

    s = sub.add_parser("classify", help="threshold angles at a calibrated theta")
    s.add_argument("--keypoints", required=True)
    s.add_argument("--dim", type=int, choices=(2, 3), default=3)
    s.add_argument("--theta", required=True, help="degrees or a calibration JSON")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_classify)

    s = sub.add_parser("factors", help="factor importance regression")
    s.add_argument("--consensus", required=True)
    s.add_argument("--ratings", required=True)
    s.add_argument("--angles", required=True)
    s.add_argument("--occlusion", required=True)
    s.add_argument("--postures", required=True, help="keypoint JSON carrying posture labels")
    s.add_argument("--dim", type=int, choices=(2, 3), default=3)
    s.add_argument("--response", choices=("bayesian", "pose3d"), default="bayesian")
    s.add_argument("--angle-source", choices=("human", "pose"))
    s.add_argument("--angle-collapse", choices=ANGLE_COLLAPSE, default="mean",
                   help="how the raters' angle classes enter a human angle covariate")
    s.add_argument("--theta", help="degrees or calibration JSON (pose3d response)")
    s.add_argument("--ridge", type=float, default=DEFAULT_RIDGE)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_factors)

    s = sub.add_parser("simulate", help="synthetic skeletons and raters")
    s.add_argument("--spec", required=True)
    s.add_argument("--out-keypoints", required=True)
    s.add_argument("--out-ratings", required=True)
    s.add_argument("--out-truth", required=True)
    s.add_argument("--out-occlusion")
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("run", help="full pipeline from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(fn=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except (DataValidationError, ConfigError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except FileNotFoundError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
