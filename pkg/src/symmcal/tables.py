"""CSV / JSON readers and writers for angle, consensus and report files.

Floats are written with ``repr`` so files round-trip exactly and repeated
runs are byte-identical.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .skeleton import LIMBS, DataValidationError


def fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def _writer(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return None if math.isnan(f) or math.isinf(f) else f
    return obj


def dump_json(obj, path) -> None:
    text = json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


# ------------------------------------------------------------ angles

def write_angles(profiles, path, theta: float | None = None) -> None:
    from .geometry import assess

    fh, w = _writer(path)
    with fh:
        header = ["image_id", "limb", "angle_deg", "valid"]
        if theta is not None:
            header.append("symmetry")
        w.writerow(header)
        for prof in profiles:
            labels = assess(prof, theta).as_binary() if theta is not None else None
            for k, limb in enumerate(LIMBS):
                row = [prof.image_id, limb, fmt(prof.angles[limb]), int(prof.validity[limb])]
                if labels is not None:
                    row.append("" if np.isnan(labels[k]) else int(labels[k]))
                w.writerow(row)


def read_angles(path) -> dict[tuple[str, str], float]:
    """(image_id, limb) -> angle in degrees, NaN when invalid."""
    out = {}
    with open(path, newline="") as fh:
        for i, r in enumerate(csv.DictReader(fh), start=2):
            limb = r["limb"].strip()
            if limb not in LIMBS:
                raise DataValidationError(f"{path} row {i}: unknown limb {limb!r}")
            valid = r.get("valid", "1").strip() not in ("0", "false", "")
            val = r["angle_deg"].strip()
            try:
                out[(r["image_id"].strip(), limb)] = float(val) if (valid and val) else math.nan
            except ValueError:
                raise DataValidationError(f"{path} row {i}: bad angle {val!r}") from None
    return out


def write_histogram(angle_matrix, path, bin_width: float = 5.0) -> None:
    from .geometry import histogram

    a = np.asarray(angle_matrix, dtype=float).reshape(-1, len(LIMBS))
    fh, w = _writer(path)
    with fh:
        w.writerow(["limb", "bin_lo", "bin_hi", "count"])
        for name, col in [*zip(LIMBS, a.T), ("all", a.ravel())]:
            edges, counts = histogram(col, bin_width)
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([name, fmt(lo), fmt(hi), int(c)])


# ------------------------------------------------------------ consensus

def write_consensus(items, path, posterior=None, class_probs=None) -> None:
    fh, w = _writer(path)
    with fh:
        if class_probs is not None:
            cp = np.asarray(class_probs)
            w.writerow(["image_id", "limb", "P0", "P1", "P2", "hard_label"])
            hard = np.argmax(cp, axis=1)
            for (img, limb), p, h in zip(items, cp, hard):
                w.writerow([img, limb, fmt(p[0]), fmt(p[1]), fmt(p[2]), int(h)])
        else:
            mu = np.asarray(posterior)
            w.writerow(["image_id", "limb", "posterior", "hard_label"])
            for (img, limb), m in zip(items, mu):
                w.writerow([img, limb, fmt(m), int(m >= 0.5)])


def read_consensus(path) -> dict[tuple[str, str], dict]:
    """(image_id, limb) -> row dict with floats; ``hard_label`` as int."""
    out = {}
    with open(path, newline="") as fh:
        for i, r in enumerate(csv.DictReader(fh), start=2):
            key = (r["image_id"].strip(), r["limb"].strip())
            if key in out:
                raise DataValidationError(f"{path} row {i}: duplicate consensus cell {key}")
            row = {k: float(v) for k, v in r.items() if k not in ("image_id", "limb") and v != ""}
            row["hard_label"] = int(row["hard_label"])
            out[key] = row
    return out


def consensus_binary(row: dict) -> float:
    """Binary target from a consensus row: symmetry label, or angle class >= 1."""
    if "P0" in row:
        return float(row["hard_label"] >= 1)
    return float(row["hard_label"])


def write_rater_report(rows, path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["rater_id", "n", "sensitivity", "specificity", "accuracy", "kappa"])
        for r in rows:
            w.writerow([r.rater_id, r.n, fmt(r.sensitivity), fmt(r.specificity),
                        fmt(r.accuracy), fmt(r.kappa)])


def write_roc(roc, path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["fpr", "tpr", "score_threshold"])
        for f, t, s in roc.points():
            w.writerow([fmt(f), fmt(t), "inf" if math.isinf(s) else fmt(s)])


def write_kappa_curve(curve, path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["theta_deg", "kappa"])
        for t, k in curve:
            w.writerow([fmt(t), fmt(k)])
