"""Command-line front end.

Every subcommand is a pure function of its input files and flags: seeds are
always explicit and no clock or ambient randomness is consulted, so re-runs
produce byte-identical outputs.  Diagnostics go to stderr; machine-readable
output goes to files only.  Exit codes: 0 success, 1 validation error,
2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import augmentation, phantom, projection, regions, segmentation
from . import gradcam as gradcam_mod
from .errors import CtprojError
from .volume import (Axis, BinaryMask, HuVolume, load_mask, load_volume,
                     save_mask, save_volume)

log = logging.getLogger("ctproj")


def _setup_logging():
    level = os.environ.get("CTPROJECT_LOG", "WARNING").upper()
    logging.basicConfig(stream=sys.stderr,
                        level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def cmd_phantom(args) -> int:
    spec = phantom.load_spec(args.spec)
    vol, mask, inventory = phantom.generate_phantom(spec)
    save_volume(vol, args.out_volume)
    save_mask(mask, args.out_mask)
    if args.out_lesions:
        _write_json(Path(args.out_lesions),
                    [{"kind": r.kind, "voxel_count": r.voxel_count,
                      "params": r.params} for r in inventory])
    return 0


def cmd_segment(args) -> int:
    vol = load_volume(args.volume)
    mask = segmentation.segment_lungs(
        vol, threshold_hu=args.threshold_hu, min_voxels=args.min_voxels,
        connectivity=args.connectivity, r_intermediate=args.r_intermediate,
        r_external=args.r_external, r_close=args.r_close)
    save_mask(mask, args.out_mask)
    return 0


def cmd_project(args) -> int:
    vol = load_volume(args.volume)
    mask = load_mask(args.mask)
    axis = Axis(args.axis)
    img = projection.aip(vol, mask, axis)
    img = projection.normalize01(img)
    projection.save_projection(img, args.out)
    return 0


def cmd_regions(args) -> int:
    vol = load_volume(args.volume)
    mask = load_mask(args.mask)
    boxes = regions.partition_regions(vol.dims, vol.orientation)
    outdir = Path(args.out)
    for rid, box in sorted(boxes.items(), key=lambda kv: kv[0].value):
        sub_v = HuVolume(
            box.shape(), vol.spacing_mm,
            vol.data[box.x0:box.x1, box.y0:box.y1, box.z0:box.z1],
            vol.orientation)
        sub_m = BinaryMask(
            box.shape(),
            mask.data[box.x0:box.x1, box.y0:box.y1, box.z0:box.z1])
        for axis in Axis:
            img = projection.aip_channels(sub_v, sub_m, axis)
            img = projection.normalize01(img)
            projection.save_projection(img, outdir / f"{rid.value}_{axis.value}")
    return 0


def cmd_augment3d(args) -> int:
    vol = load_volume(args.volume)
    outdir = Path(args.out)
    for i, rotated in enumerate(augmentation.rotations27(vol, args.fill_hu)):
        save_volume(rotated, outdir / f"rot_{i:02d}")
    return 0


def cmd_augment2d(args) -> int:
    img = projection.load_projection(args.image)
    spec = augmentation.Augment2Spec(args.max_rotation_deg,
                                     (args.scale_min, args.scale_max),
                                     args.seed)
    out = augmentation.augment2d(img, spec, args.draw_index)
    projection.save_projection(out, args.out)
    return 0


def _write_manifest(path: Path, records, scan_ids) -> None:
    lines = ["patient_id,scan_id"]
    for r in records:
        if r.scan_id in scan_ids:
            lines.append(f"{r.patient_id},{r.scan_id}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def cmd_split(args) -> int:
    records = regions.load_labels_csv(args.labels)
    split = regions.split_by_patient(records, args.fraction, args.seed)
    _write_manifest(Path(args.out_train), records, split.train)
    _write_manifest(Path(args.out_test), records, split.test)
    return 0


def cmd_survival_labels(args) -> int:
    records = regions.load_labels_csv(args.labels)
    deaths = regions.load_roster_csv(args.roster)
    from datetime import date
    labeled = regions.assign_survival_labels(
        records, deaths, date.fromisoformat(args.annotation_date))
    lines = ["patient_id,scan_id,survival_label"]
    for r in labeled:
        lines.append(f"{r.patient_id},{r.scan_id},{r.survival_label or ''}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    return 0


def cmd_gradcam(args) -> int:
    net = gradcam_mod.load_weights(args.weights)
    img = projection.load_projection(args.image)
    cache = gradcam_mod.forward(net, img)
    grads = gradcam_mod.backward_to_features(net, cache, args.class_index,
                                             score=args.score)
    cam = gradcam_mod.gradcam(cache["features"], grads)
    overlay = gradcam_mod.cam_overlay(cam, img.width, img.height)
    projection.save_projection(overlay, args.out)
    return 0


def cmd_report(args) -> int:
    import time
    t0 = time.perf_counter()
    pred = load_mask(args.mask)
    ref = load_mask(args.ref)
    metrics = {
        "schema_version": 1,
        "dice": segmentation.dice(pred, ref),
        "voxels_mask": pred.count(),
        "voxels_ref": ref.count(),
    }
    _write_json(Path(args.out), metrics)
    # Timing is diagnostic only; keeping it off the metrics file keeps
    # re-runs byte-identical.
    log.info("report completed in %.3f s", time.perf_counter() - t0)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctproj",
                                description="Volumetric CT processing toolkit")
    p.add_argument("--threads", type=int, default=1,
                   help="internal data parallelism (results are independent of N)")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("phantom", help="generate a synthetic phantom")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--out-volume", required=True)
    sp.add_argument("--out-mask", required=True)
    sp.add_argument("--out-lesions")
    sp.set_defaults(func=cmd_phantom)

    sp = sub.add_parser("segment", help="segment lungs from a volume")
    sp.add_argument("--volume", required=True)
    sp.add_argument("--out-mask", required=True)
    sp.add_argument("--threshold-hu", type=int,
                    default=segmentation.DEFAULT_THRESHOLD_HU)
    sp.add_argument("--min-voxels", type=int,
                    default=segmentation.DEFAULT_MIN_VOXELS)
    sp.add_argument("--connectivity", type=int, choices=(6, 26), default=26)
    sp.add_argument("--r-intermediate", type=int,
                    default=segmentation.DEFAULT_R_INTERMEDIATE)
    sp.add_argument("--r-external", type=int,
                    default=segmentation.DEFAULT_R_EXTERNAL)
    sp.add_argument("--r-close", type=int, default=segmentation.DEFAULT_R_CLOSE)
    sp.set_defaults(func=cmd_segment)

    sp = sub.add_parser("project", help="grayscale masked projection")
    sp.add_argument("--volume", required=True)
    sp.add_argument("--mask", required=True)
    sp.add_argument("--axis", choices=("x", "y", "z"), required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_project)

    sp = sub.add_parser("regions", help="banded projections of the 6 sub-regions")
    sp.add_argument("--volume", required=True)
    sp.add_argument("--mask", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_regions)

    sp = sub.add_parser("augment3d", help="write the 27 rotated volumes")
    sp.add_argument("--volume", required=True)
    sp.add_argument("--fill-hu", type=int, default=-1000)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_augment3d)

    sp = sub.add_parser("augment2d", help="random rotate/scale of a projection")
    sp.add_argument("--image", required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--draw-index", type=int, required=True)
    sp.add_argument("--max-rotation-deg", type=float, default=20.0)
    sp.add_argument("--scale-min", type=float, default=0.8)
    sp.add_argument("--scale-max", type=float, default=1.2)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_augment2d)

    sp = sub.add_parser("split", help="patient-disjoint train/test split")
    sp.add_argument("--labels", required=True)
    sp.add_argument("--fraction", type=float, required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out-train", required=True)
    sp.add_argument("--out-test", required=True)
    sp.set_defaults(func=cmd_split)

    sp = sub.add_parser("survival-labels", help="assign 2-year survival labels")
    sp.add_argument("--labels", required=True)
    sp.add_argument("--roster", required=True)
    sp.add_argument("--annotation-date", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_survival_labels)

    sp = sub.add_parser("gradcam", help="class activation overlay for an image")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--class-index", type=int, required=True)
    sp.add_argument("--score", choices=("logit", "softmax"), default="logit")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gradcam)

    sp = sub.add_parser("report", help="metrics JSON (Dice vs reference mask)")
    sp.add_argument("--mask", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)

    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (CtprojError, ValueError, KeyError) as exc:
        print(f"ERROR:validation: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ERROR:io: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
