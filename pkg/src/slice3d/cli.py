"""Command-line pipeline driver.

Subcommands wire the library stages together:

* ``slice``        - print the patch manifest for an image
* ``infer``        - sliced detection over one image, merged with NMS
* ``depth2cloud``  - depth PNG + calibration -> PLY / xyz point cloud
* ``pseudolabel``  - point cloud + 2D detections -> fitted 3D label file
* ``eval``         - average precision over detection/ground-truth dirs
* ``anchors``      - dump an anchor grid (2D box + 3D prior) as text
* ``aa-bench``     - shift-consistency table for the downsampling ops
* ``gen-synthetic``- write the seeded bright-squares corpus

Exit codes: 0 success, 2 input/configuration error, 3 detector backend
failure. All commands are deterministic for fixed inputs, flags, and
seeds; ``infer`` output bytes do not depend on ``--jobs``.

Configuration files are line oriented, ``section.key = value`` with
``#`` comments. Recognized keys::

    slice.patch_h / slice.patch_w / slice.overlap_ratio
    merge.match_threshold / merge.detection_threshold / merge.full_inference
    detector.kind            blob | external
    detector.threshold       blob intensity threshold (default 0.5)
    detector.min_pixels      blob minimum component size (default 1)
    detector.command         external detector command line (shell syntax)
    intrinsics.calib         path to a KITTI calibration file
    intrinsics.fx/fy/cx/cy   explicit pinhole intrinsics
    output.dir               directory for produced files (default .)
"""

from __future__ import annotations

import argparse
import io
import math
import os
import shlex
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import antialias, pgm, synthetic
from .anchors import AnchorSpec, generate_anchors
from .geometry import BBox2D, CameraIntrinsics, Detection, wrap_angle
from .kitti import (
    KittiLabel,
    evaluate_ap,
    parse_calib,
    parse_label_file,
    read_depth_png,
    read_velodyne_bin,
    write_label_file,
)
from .pseudolidar import (
    cloud_from_points,
    depth_to_cloud,
    fit_pseudo_label,
    frustum_points,
    read_xyz,
    write_ply,
    write_xyz,
)
from .sahi import (
    BackendError,
    BlobDetector,
    ExternalDetector,
    MergeConfig,
    SliceConfig,
    compute_slices,
    sahi_infer,
)

__all__ = ["PipelineConfig", "ConfigError", "main", "parse_config", "parse_detection_file"]

DEFAULT_CLASS_NAMES = ("Car", "Pedestrian", "Cyclist")


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    """Validated pipeline settings (one detector source, readable paths)."""

    slice: SliceConfig
    merge: MergeConfig
    detector_kind: str
    blob_threshold: float = 0.5
    blob_min_pixels: int = 1
    detector_command: list[str] = field(default_factory=list)
    intrinsics: CameraIntrinsics | None = None
    output_dir: Path = Path(".")

    def make_backend(self):
        if self.detector_kind == "blob":
            return BlobDetector(self.blob_threshold, self.blob_min_pixels)
        return ExternalDetector(self.detector_command)


def parse_config(text: str, base_dir: Path | None = None) -> PipelineConfig:
    """Parse ``section.key = value`` lines into a PipelineConfig."""
    base = base_dir or Path(".")
    entries: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'section.key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"line {ln}: key {key!r} is missing its section prefix")
        entries[key] = value

    def take(key: str, default=None):
        return entries.pop(key, default)

    def as_float(key: str, default: float) -> float:
        value = take(key)
        if value is None:
            return default
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {value!r}") from None

    def as_int(key: str, default: int) -> int:
        value = take(key)
        if value is None:
            return default
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {value!r}") from None

    def as_bool(key: str, default: bool) -> bool:
        value = take(key)
        if value is None:
            return default
        lowered = value.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key} must be a boolean, got {value!r}")

    try:
        slice_cfg = SliceConfig(
            patch_h=as_int("slice.patch_h", 512),
            patch_w=as_int("slice.patch_w", 512),
            overlap_ratio=as_float("slice.overlap_ratio", 0.2),
        )
        merge_cfg = MergeConfig(
            match_threshold=as_float("merge.match_threshold", 0.5),
            detection_threshold=as_float("merge.detection_threshold", 0.0),
            full_inference=as_bool("merge.full_inference", False),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    kind = take("detector.kind", "blob")
    if kind not in ("blob", "external"):
        raise ConfigError(f"detector.kind must be 'blob' or 'external', got {kind!r}")
    blob_threshold = as_float("detector.threshold", 0.5)
    blob_min_pixels = as_int("detector.min_pixels", 1)
    command_raw = take("detector.command")
    if kind == "external":
        if not command_raw:
            raise ConfigError("detector.kind = external requires detector.command")
        command = shlex.split(command_raw)
    else:
        if command_raw:
            raise ConfigError("detector.command is only valid with detector.kind = external")
        command = []

    calib_path = take("intrinsics.calib")
    fx = take("intrinsics.fx")
    intrinsics = None
    if calib_path is not None and fx is not None:
        raise ConfigError("give either intrinsics.calib or explicit intrinsics, not both")
    if calib_path is not None:
        path = (base / calib_path).resolve() if not Path(calib_path).is_absolute() else Path(calib_path)
        if not path.is_file():
            raise ConfigError(f"intrinsics.calib path {path} is not readable")
        intrinsics = parse_calib(path.read_text()).intrinsics
    elif fx is not None:
        try:
            intrinsics = CameraIntrinsics(
                fx_px=float(fx),
                fy_px=float(entries.pop("intrinsics.fy")),
                cx_px=float(entries.pop("intrinsics.cx")),
                cy_px=float(entries.pop("intrinsics.cy")),
            )
        except KeyError as exc:
            raise ConfigError(f"explicit intrinsics need fx/fy/cx/cy, missing {exc}") from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    out_dir = Path(take("output.dir", "."))
    if entries:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(entries))}")
    return PipelineConfig(
        slice=slice_cfg,
        merge=merge_cfg,
        detector_kind=kind,
        blob_threshold=blob_threshold,
        blob_min_pixels=blob_min_pixels,
        detector_command=command,
        intrinsics=intrinsics,
        output_dir=out_dir,
    )


def load_config(path: str) -> PipelineConfig:
    cfg_path = Path(path)
    if not cfg_path.is_file():
        raise ConfigError(f"config file {path} is not readable")
    return parse_config(cfg_path.read_text(), base_dir=cfg_path.parent)


def read_image(path: str) -> np.ndarray:
    """Load a grayscale image as floats in [0, 1]; PGM (P5) or 16-bit PNG."""
    p = Path(path)
    if not p.is_file():
        raise OSError(f"image {path} is not readable")
    data = p.read_bytes()
    if data[:2] == b"P5":
        return pgm.read_pgm(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        img = Image.open(io.BytesIO(data))
        img.load()
        if img.mode not in ("I;16", "I;16B", "I"):
            raise ValueError(f"PNG images must be 16-bit grayscale, got mode {img.mode}")
        return np.asarray(img, dtype=np.float64) / 65535.0
    raise ValueError(f"unsupported image format in {path} (expected PGM P5 or 16-bit PNG)")


def format_detection_line(det: Detection) -> str:
    b = det.bbox
    return f"{det.class_id} {det.score:.6f} {b.x1:.2f} {b.y1:.2f} {b.x2:.2f} {b.y2:.2f}"


def write_detection_file(dets: list[Detection]) -> str:
    ordered = sorted(
        dets, key=lambda d: (-d.score, d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2, d.class_id)
    )
    return "".join(format_detection_line(d) + "\n" for d in ordered)


def parse_detection_file(text: str) -> list[Detection]:
    dets = []
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 6:
            raise ValueError(f"line {ln}: expected 6 fields, got {len(fields)}")
        try:
            dets.append(
                Detection(
                    BBox2D(*(float(v) for v in fields[2:6])),
                    float(fields[1]),
                    int(fields[0]),
                )
            )
        except ValueError as exc:
            raise ValueError(f"line {ln}: {exc}") from None
    return dets


def _resolve_jobs(args_jobs: int | None) -> int:
    if args_jobs is not None:
        return max(1, args_jobs)
    env = os.environ.get("SLICE3D_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"SLICE3D_JOBS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# subcommands


def _cmd_slice(args) -> int:
    config = load_config(args.config)
    image = read_image(args.image)
    regions = compute_slices(image.shape[0], image.shape[1], config.slice)
    lines = "".join(
        f"{r.origin_row} {r.origin_col} {r.height} {r.width}\n" for r in regions
    )
    if args.out:
        Path(args.out).write_text(lines)
    else:
        sys.stdout.write(lines)
    return 0


def _cmd_infer(args) -> int:
    config = load_config(args.config)
    image = read_image(args.image)
    jobs = _resolve_jobs(args.jobs)
    backend = config.make_backend()
    diagnostics: dict = {"clipped_boxes": 0, "backend_failures": 0}

    t0 = time.perf_counter()
    regions = compute_slices(image.shape[0], image.shape[1], config.slice)
    t1 = time.perf_counter()
    merged = sahi_infer(
        image, backend, config.slice, config.merge,
        upscale=args.upscale, jobs=jobs, diagnostics=diagnostics,
    )
    t2 = time.perf_counter()

    config.output_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    det_path = Path(args.out) if args.out else config.output_dir / f"{stem}.det.txt"
    report_path = Path(args.report) if args.report else config.output_dir / f"{stem}.report.txt"
    det_path.write_text(write_detection_file(merged))
    t3 = time.perf_counter()

    report = {
        "slices": len(regions),
        "raw_detections": diagnostics.get("raw_detections", 0),
        "merged_detections": diagnostics.get("merged_detections", 0),
        "points": 0,
        "clipped_boxes": diagnostics.get("clipped_boxes", 0),
        "backend_failures": diagnostics.get("backend_failures", 0),
        "jobs": jobs,
        "time_slice_ms": f"{(t1 - t0) * 1000:.3f}",
        "time_detect_ms": f"{(t2 - t1) * 1000:.3f}",
        "time_write_ms": f"{(t3 - t2) * 1000:.3f}",
        "time_total_ms": f"{(t3 - t0) * 1000:.3f}",
    }
    report_path.write_text("".join(f"{k}={v}\n" for k, v in report.items()))
    return 0


def _cmd_depth2cloud(args) -> int:
    depth = read_depth_png(Path(args.depth).read_bytes())
    calib = parse_calib(Path(args.calib).read_text())
    cloud = depth_to_cloud(depth, calib.intrinsics, sample_stride=args.stride)
    text = write_ply(cloud) if args.format == "ply" else write_xyz(cloud)
    out = Path(args.out) if args.out else Path(args.depth).with_suffix(f".{args.format}")
    out.write_text(text)
    sys.stderr.write(f"points={len(cloud)}\n")
    return 0


def _load_cloud(path: str, intr: CameraIntrinsics):
    p = Path(path)
    if not p.is_file():
        raise OSError(f"cloud file {path} is not readable")
    if p.suffix == ".bin":
        points = read_velodyne_bin(p.read_bytes())[:, :3]
    elif p.suffix == ".xyz":
        points = read_xyz(p.read_text())
    else:
        raise ValueError(f"unsupported cloud format {p.suffix!r} (expected .bin or .xyz)")
    return cloud_from_points(points, intr)


def _cmd_pseudolabel(args) -> int:
    calib = parse_calib(Path(args.calib).read_text())
    intr = calib.intrinsics
    cloud = _load_cloud(args.cloud, intr)
    dets = parse_detection_file(Path(args.detections).read_text())
    names = tuple(args.classes.split(",")) if args.classes else DEFAULT_CLASS_NAMES

    labels = []
    skipped = 0
    for det in dets:
        subset = frustum_points(cloud, det.bbox, intr)
        if len(subset) < args.min_points:
            skipped += 1
            continue
        box = fit_pseudo_label(subset.points)
        name = names[det.class_id] if det.class_id < len(names) else f"Class_{det.class_id}"
        x, _, z = box.center
        labels.append(
            KittiLabel(
                type=name,
                truncated=0.0,
                occluded=0,
                alpha=wrap_angle(box.yaw - math.atan2(x, z)),
                bbox=det.bbox,
                dims=box.dims,
                location=box.center,
                rotation_y=box.yaw,
                score=det.score,
            )
        )
    out = Path(args.out) if args.out else Path(args.detections).with_suffix(".labels.txt")
    out.write_text(write_label_file(labels))
    sys.stderr.write(f"labels={len(labels)} skipped={skipped}\n")
    return 0


def _cmd_eval(args) -> int:
    det_dir, gt_dir = Path(args.detections), Path(args.ground_truth)
    if not det_dir.is_dir() or not gt_dir.is_dir():
        raise OSError("detections and ground-truth arguments must be directories")
    det_files = {p.name: p for p in sorted(det_dir.glob("*.txt"))}
    gt_files = {p.name: p for p in sorted(gt_dir.glob("*.txt"))}
    if set(det_files) != set(gt_files):
        only_det = sorted(set(det_files) - set(gt_files))
        only_gt = sorted(set(gt_files) - set(det_files))
        raise ValueError(
            "detection and ground-truth file sets differ: "
            f"only in detections {only_det}, only in ground truth {only_gt}"
        )
    dets, gts = [], []
    for name in sorted(gt_files):
        dets.append(parse_label_file(det_files[name].read_text()))
        gts.append(parse_label_file(gt_files[name].read_text()))
    results = evaluate_ap(
        dets, gts,
        iou_threshold=args.iou,
        mode=args.mode,
        recall_points=args.recall_points,
        difficulty=args.difficulty,
    )
    for cls in sorted(results):
        sys.stdout.write(f"{cls} {results[cls].ap:.6f}\n")
    return 0


def _cmd_anchors(args) -> int:
    try:
        scales = tuple(float(v) for v in args.scales.split(","))
        ratios = tuple(float(v) for v in args.ratios.split(","))
        dims = tuple(float(v) for v in args.dims.split(","))
    except ValueError:
        raise ConfigError("scales, ratios, and dims must be comma-separated numbers") from None
    if len(dims) != 3:
        raise ConfigError("dims must be three numbers h,w,l")
    spec = AnchorSpec(scales=scales, aspect_ratios=ratios,
                      depth_prior=args.depth, dims_prior=dims, yaw_prior=args.yaw)
    anchors = generate_anchors(args.image_h, args.image_w, args.stride, spec)
    lines = []
    for a in anchors:
        b = a.bbox2d
        h, w, l = a.prior_dims
        lines.append(
            f"{b.x1:.2f} {b.y1:.2f} {b.x2:.2f} {b.y2:.2f} "
            f"{a.prior_z:.2f} {h:.2f} {w:.2f} {l:.2f} {a.prior_yaw:.4f} "
            f"{int(a.crosses_border)}"
        )
    text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_aa_bench(args) -> int:
    rows = antialias.consistency_table(
        seed=args.seed,
        count=args.corpus_size,
        size=args.image_size,
        stride=args.stride,
        window=args.window,
        kernel_size=args.kernel,
    )
    sys.stdout.write(f"{'op':<18} {'padding':<9} {'shift':>5} {'mean':>10} {'min':>10}\n")
    for op, pad, shift, mean, minimum in rows:
        sys.stdout.write(f"{op:<18} {pad:<9} {shift:>5d} {mean:>10.6f} {minimum:>10.6f}\n")
    return 0


def _cmd_gen_synthetic(args) -> int:
    out = Path(args.out)
    image_dir = out / "images"
    label_dir = out / "labels"
    image_dir.mkdir(parents=True, exist_ok=True)
    label_dir.mkdir(parents=True, exist_ok=True)
    scenes = synthetic.square_corpus(
        seed=args.seed,
        count=args.count,
        image_size=args.image_size,
        n_squares=args.squares,
        square_size=args.square_size,
        min_gap=args.min_gap,
    )
    for idx, scene in enumerate(scenes):
        name = f"{idx:06d}"
        (image_dir / f"{name}.pgm").write_bytes(pgm.write_pgm(scene.image))
        labels = [
            KittiLabel(
                type=args.class_name,
                truncated=0.0,
                occluded=0,
                alpha=-10.0,
                bbox=box,
                dims=(-1.0, -1.0, -1.0),
                location=(-1000.0, -1000.0, -1000.0),
                rotation_y=-10.0,
            )
            for box in scene.boxes
        ]
        (label_dir / f"{name}.txt").write_text(write_label_file(labels))
    sys.stderr.write(f"images={len(scenes)}\n")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slice3d", description="Sliced small-object inference pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("slice", help="print the patch manifest for an image")
    p.add_argument("image")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-o", "--out")
    p.set_defaults(func=_cmd_slice)

    p = sub.add_parser("infer", help="sliced detection over one image")
    p.add_argument("image")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-o", "--out", help="detections file (default <output.dir>/<stem>.det.txt)")
    p.add_argument("--report", help="report file (default <output.dir>/<stem>.report.txt)")
    p.add_argument("--jobs", type=int, default=None,
                   help="worker threads (default: $SLICE3D_JOBS or CPU count)")
    p.add_argument("--upscale", type=int, default=1,
                   help="nearest-neighbor patch upscale factor fed to the detector")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("depth2cloud", help="depth PNG to point cloud")
    p.add_argument("depth")
    p.add_argument("calib")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--format", choices=("ply", "xyz"), default="ply")
    p.add_argument("-o", "--out")
    p.set_defaults(func=_cmd_depth2cloud)

    p = sub.add_parser("pseudolabel", help="fit 3D labels to frustum points")
    p.add_argument("cloud", help="point cloud (.bin velodyne or .xyz text, camera frame)")
    p.add_argument("calib")
    p.add_argument("detections", help="detection file from `infer`")
    p.add_argument("--min-points", type=int, default=8)
    p.add_argument("--classes", help="comma-separated class names indexed by class_id")
    p.add_argument("-o", "--out")
    p.set_defaults(func=_cmd_pseudolabel)

    p = sub.add_parser("eval", help="average precision over label directories")
    p.add_argument("detections")
    p.add_argument("ground_truth")
    p.add_argument("--mode", choices=("2d", "3d"), default="2d")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--recall-points", type=int, default=40)
    p.add_argument("--difficulty", choices=("easy", "moderate", "hard"), default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("anchors", help="dump an anchor grid as text for inspection")
    p.add_argument("--image-h", type=int, required=True)
    p.add_argument("--image-w", type=int, required=True)
    p.add_argument("--stride", type=int, default=16)
    p.add_argument("--scales", default="32", help="comma-separated box sizes in px")
    p.add_argument("--ratios", default="0.5,1.0,2.0", help="comma-separated w/h ratios")
    p.add_argument("--depth", type=float, default=20.0, help="3D depth prior in meters")
    p.add_argument("--dims", default="1.5,1.6,3.9", help="3D dims prior h,w,l in meters")
    p.add_argument("--yaw", type=float, default=0.0, help="3D yaw prior in radians")
    p.add_argument("-o", "--out")
    p.set_defaults(func=_cmd_anchors)

    p = sub.add_parser("aa-bench", help="shift-consistency benchmark table")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corpus-size", type=int, default=100)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--window", type=int, default=2)
    p.add_argument("--kernel", type=int, default=3)
    p.set_defaults(func=_cmd_aa_bench)

    p = sub.add_parser("gen-synthetic", help="write the seeded squares corpus")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--image-size", type=int, default=1024)
    p.add_argument("--squares", type=int, default=5)
    p.add_argument("--square-size", type=int, default=8)
    p.add_argument("--min-gap", type=int, default=2)
    p.add_argument("--class-name", default="Car")
    p.set_defaults(func=_cmd_gen_synthetic)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except BackendError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 3
    except (ConfigError, OSError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
