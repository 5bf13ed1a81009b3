"""Convert COCO person-keypoint annotations (17 joints) to the symmcal keypoint JSON.

Only the 12 limb joints are kept. COCO visibility v=0 (not labelled) becomes an
invisible joint; v=1 (labelled, occluded) keeps its coordinates with
confidence 0.5; v=2 is visible with confidence 1. When an image has several
person annotations the one with the largest area is used.

Postures are read from an optional CSV with columns image_id,posture.
"""
import argparse
import csv
import json
import sys
from pathlib import Path

from symmcal.skeleton import JOINTS, Keypoint, Skeleton, save_keypoints

COCO_ORDER = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hip", "right_hip", "left_knee", "right_knee", "left_ankle", "right_ankle",
)


def convert(coco: dict, postures: dict[str, str], id_from: str = "file_stem"):
    images = {im["id"]: im for im in coco.get("images", [])}
    best = {}
    for ann in coco.get("annotations", []):
        if ann.get("num_keypoints", 1) == 0 or len(ann.get("keypoints", ())) != 3 * len(COCO_ORDER):
            continue
        prev = best.get(ann["image_id"])
        if prev is None or ann.get("area", 0) > prev.get("area", 0):
            best[ann["image_id"]] = ann
    out = []
    for img_id in sorted(best, key=str):
        ann = best[img_id]
        im = images.get(img_id, {})
        name = Path(im["file_name"]).stem if id_from == "file_stem" and "file_name" in im else str(img_id)
        flat = ann["keypoints"]
        kps = {}
        for j, joint in enumerate(COCO_ORDER):
            if joint not in JOINTS:
                continue
            x, y, v = flat[3 * j: 3 * j + 3]
            if v == 0:
                kps[joint] = Keypoint.missing(joint, 2)
            else:
                kps[joint] = Keypoint(joint, [float(x), float(y)], 1.0 if v == 2 else 0.5, True)
        out.append(Skeleton(name, 2, kps, postures.get(name, "unknown")))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("coco_json")
    ap.add_argument("--out", required=True)
    ap.add_argument("--postures", help="CSV with image_id,posture")
    ap.add_argument("--image-id", choices=("file_stem", "coco_id"), default="file_stem")
    args = ap.parse_args(argv)

    postures = {}
    if args.postures:
        with open(args.postures, newline="") as fh:
            postures = {r["image_id"]: r["posture"].strip() for r in csv.DictReader(fh)}
    coco = json.loads(Path(args.coco_json).read_text())
    skeletons = convert(coco, postures, args.image_id)
    save_keypoints(skeletons, args.out)
    print(f"{len(skeletons)} skeletons written to {args.out}", file=sys.stderr)


if __name__ == "__main__":
    main()
