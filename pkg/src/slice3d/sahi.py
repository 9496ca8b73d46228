"""Slicing-aided inference: tile, detect per patch, remap, merge with NMS.

Small objects occupy too few pixels for a detector running on the full
frame. The engine cuts the image into overlapping fixed-size patches,
runs a detector backend on each patch (optionally plus the full image),
translates the per-patch detections back into image coordinates, and
fuses everything with greedy per-class NMS.

A detector backend is any callable mapping a 2D float image in [0, 1]
to a list of :class:`~slice3d.geometry.Detection` in patch-local
coordinates. Backends advertise thread safety through a
``concurrency_safe`` attribute (assumed False when absent); only safe
backends are fanned out to a thread pool. Results never depend on
completion order: patches are merged in a fixed order and NMS sorts its
input deterministically.
"""

from __future__ import annotations

import math
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .geometry import BBox2D, Detection, iou_2d
from .pgm import write_pgm

__all__ = [
    "SliceConfig",
    "SliceRegion",
    "MergeConfig",
    "BackendError",
    "BlobDetector",
    "ExternalDetector",
    "compute_slices",
    "remap_detections",
    "nms_merge",
    "sahi_infer",
    "slice_dataset",
]

DetectorBackend = Callable[[np.ndarray], list[Detection]]


@dataclass(frozen=True)
class SliceConfig:
    """Patch size in pixels and the fractional overlap between patches."""

    patch_h: int
    patch_w: int
    overlap_ratio: float = 0.2

    def __post_init__(self) -> None:
        if self.patch_h < 1 or self.patch_w < 1:
            raise ValueError("patch dimensions must be >= 1")
        if not 0.0 <= self.overlap_ratio < 1.0:
            raise ValueError(f"overlap_ratio must lie in [0, 1), got {self.overlap_ratio}")


@dataclass(frozen=True)
class SliceRegion:
    """A rectangular window fully inside the source image."""

    origin_row: int
    origin_col: int
    height: int
    width: int

    def __post_init__(self) -> None:
        if self.origin_row < 0 or self.origin_col < 0:
            raise ValueError("region origin must be non-negative")
        if self.height < 1 or self.width < 1:
            raise ValueError("region must have positive size")

    def crop(self, image: np.ndarray) -> np.ndarray:
        return image[
            self.origin_row : self.origin_row + self.height,
            self.origin_col : self.origin_col + self.width,
        ]


@dataclass(frozen=True)
class MergeConfig:
    """NMS parameters: IoU match threshold, score floor, full-image pass."""

    match_threshold: float = 0.5
    detection_threshold: float = 0.0
    full_inference: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.match_threshold <= 1.0:
            raise ValueError("match_threshold must lie in (0, 1]")
        if not 0.0 <= self.detection_threshold <= 1.0:
            raise ValueError("detection_threshold must lie in [0, 1]")


class BackendError(RuntimeError):
    """A detector backend failed; carries the region it was working on."""

    def __init__(self, message: str, region: SliceRegion | None = None):
        super().__init__(message)
        self.region = region


def _axis_origins(image_dim: int, patch_dim: int, stride: int) -> list[int]:
    origins = []
    pos = 0
    while True:
        if pos + patch_dim >= image_dim:
            origins.append(image_dim - patch_dim)
            break
        origins.append(pos)
        pos += stride
    return origins


def compute_slices(image_h: int, image_w: int, cfg: SliceConfig) -> list[SliceRegion]:
    """Tile an image into overlapping patch regions, row-major order.

    The per-axis stride is ``floor(patch * (1 - overlap_ratio))`` (at
    least 1); origins advance from 0 and the final origin is clamped so
    the last patch sits flush with the border. Together the regions
    cover every pixel. An image smaller than the patch in either
    dimension yields a single full-image region.
    """
    if image_h < 1 or image_w < 1:
        raise ValueError(f"image must have positive size, got {image_h}x{image_w}")
    if image_h < cfg.patch_h or image_w < cfg.patch_w:
        return [SliceRegion(0, 0, image_h, image_w)]
    stride_r = max(1, math.floor(cfg.patch_h * (1.0 - cfg.overlap_ratio)))
    stride_c = max(1, math.floor(cfg.patch_w * (1.0 - cfg.overlap_ratio)))
    rows = _axis_origins(image_h, cfg.patch_h, stride_r)
    cols = _axis_origins(image_w, cfg.patch_w, stride_c)
    return [
        SliceRegion(r, c, cfg.patch_h, cfg.patch_w)
        for r in rows
        for c in cols
    ]


def remap_detections(
    dets: Sequence[Detection],
    region: SliceRegion,
    diagnostics: dict | None = None,
) -> list[Detection]:
    """Translate patch-local detections into image coordinates.

    Boxes reaching past the region bounds are clipped first; when a
    ``diagnostics`` dict is supplied its ``"clipped_boxes"`` counter is
    incremented for each such box.
    """
    out = []
    for det in dets:
        box = det.bbox
        if box.x1 < 0 or box.y1 < 0 or box.x2 > region.width or box.y2 > region.height:
            if diagnostics is not None:
                diagnostics["clipped_boxes"] = diagnostics.get("clipped_boxes", 0) + 1
            clipped = box.clipped(0.0, 0.0, float(region.width), float(region.height))
            if clipped is None:
                continue  # entirely outside the region
            box = clipped
        out.append(
            Detection(
                box.translated(float(region.origin_col), float(region.origin_row)),
                det.score,
                det.class_id,
            )
        )
    return out


def _det_sort_key(det: Detection):
    b = det.bbox
    return (-det.score, b.x1, b.y1, b.x2, b.y2)


def nms_merge(dets: Sequence[Detection], cfg: MergeConfig) -> list[Detection]:
    """Greedy per-class non-maximum suppression.

    Detections scoring below ``detection_threshold`` are dropped first.
    Within each class, boxes are visited by descending score (ties break
    on x1 then y1 ascending); a visited box is kept unless it overlaps
    an already-kept box with IoU above ``match_threshold``. The output
    order (classes ascending, kept order within class) is deterministic
    and independent of the input permutation.
    """
    survivors = [d for d in dets if d.score >= cfg.detection_threshold]
    by_class: dict[int, list[Detection]] = {}
    for det in survivors:
        by_class.setdefault(det.class_id, []).append(det)
    merged: list[Detection] = []
    for class_id in sorted(by_class):
        kept: list[Detection] = []
        for det in sorted(by_class[class_id], key=_det_sort_key):
            if all(iou_2d(det.bbox, k.bbox) <= cfg.match_threshold for k in kept):
                kept.append(det)
        merged.extend(kept)
    return merged


class BlobDetector:
    """Deterministic reference backend: bright 4-connected components.

    Pixels strictly above ``threshold`` are grouped with 4-connectivity;
    components with at least ``min_pixels`` pixels become detections with
    a tight bounding box, score = mean component intensity, class 0.
    """

    concurrency_safe = True

    def __init__(self, threshold: float = 0.5, min_pixels: int = 1):
        if min_pixels < 1:
            raise ValueError("min_pixels must be >= 1")
        self.threshold = float(threshold)
        self.min_pixels = int(min_pixels)

    def __call__(self, image: np.ndarray) -> list[Detection]:
        image = np.asarray(image, dtype=np.float64)
        labels, count = ndimage.label(image > self.threshold)  # 4-connectivity
        dets = []
        for label_id, slices in enumerate(ndimage.find_objects(labels, count), start=1):
            if slices is None:
                continue
            slc_r, slc_c = slices
            # interleaved bounding boxes can contain other components' pixels
            component = labels[slc_r, slc_c] == label_id
            size = int(component.sum())
            if size < self.min_pixels:
                continue
            score = float(image[slc_r, slc_c][component].mean())
            bbox = BBox2D(
                float(slc_c.start), float(slc_r.start), float(slc_c.stop), float(slc_r.stop)
            )
            dets.append(Detection(bbox, min(score, 1.0), 0))
        return dets


class ExternalDetector:
    """Backend that shells out to a child process per patch.

    Protocol: the patch is written to the child's stdin as a binary PGM
    (P5) image; the child prints one detection per line to stdout as
    ``class_id score x1 y1 x2 y2`` (decimal, space-separated, patch-local
    coordinates) and exits 0. A nonzero exit status, or an unparseable
    line, is a backend failure.
    """

    concurrency_safe = True

    def __init__(self, command: Sequence[str], timeout: float | None = None):
        if not command:
            raise ValueError("external detector command must be non-empty")
        self.command = list(command)
        self.timeout = timeout

    def __call__(self, image: np.ndarray) -> list[Detection]:
        proc = subprocess.run(
            self.command,
            input=write_pgm(image),
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            timeout=self.timeout,
        )
        if proc.returncode != 0:
            raise BackendError(
                f"external detector {self.command[0]!r} exited with "
                f"status {proc.returncode}: {proc.stderr.decode(errors='replace').strip()}"
            )
        dets = []
        for line in proc.stdout.decode().splitlines():
            line = line.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 6:
                raise BackendError(f"malformed detector output line: {line!r}")
            try:
                class_id = int(fields[0])
                score = float(fields[1])
                x1, y1, x2, y2 = (float(v) for v in fields[2:])
            except ValueError as exc:
                raise BackendError(f"malformed detector output line: {line!r}") from exc
            dets.append(Detection(BBox2D(x1, y1, x2, y2), score, class_id))
        return dets


def _upscale(image: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return image
    return np.kron(image, np.ones((factor, factor), dtype=image.dtype))


def _scale_detection(det: Detection, factor: int) -> Detection:
    if factor == 1:
        return det
    b = det.bbox
    return Detection(
        BBox2D(b.x1 / factor, b.y1 / factor, b.x2 / factor, b.y2 / factor),
        det.score,
        det.class_id,
    )


def _run_backend(
    backend: DetectorBackend,
    image: np.ndarray,
    region: SliceRegion,
    upscale: int,
) -> list[Detection]:
    try:
        raw = backend(_upscale(region.crop(image), upscale))
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError(
            f"detector backend failed on region row={region.origin_row} "
            f"col={region.origin_col} h={region.height} w={region.width}: {exc}",
            region,
        ) from exc
    return [_scale_detection(d, upscale) for d in raw]


def sahi_infer(
    image: np.ndarray,
    backend: DetectorBackend,
    slice_cfg: SliceConfig,
    merge_cfg: MergeConfig,
    upscale: int = 1,
    jobs: int = 1,
    diagnostics: dict | None = None,
) -> list[Detection]:
    """Run sliced inference over an image and merge the results.

    Each patch (plus the full image when ``merge_cfg.full_inference``)
    goes through the backend; patch detections are remapped into image
    coordinates and merged with :func:`nms_merge`. ``upscale`` feeds the
    backend a nearest-neighbor enlarged patch and divides the returned
    coordinates back down. With ``jobs > 1`` and a concurrency-safe
    backend, patches run in a thread pool; the merged result is
    identical either way.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise ValueError(f"expected a non-empty 2D image, got shape {image.shape}")
    if upscale < 1:
        raise ValueError("upscale factor must be >= 1")
    h, w = image.shape
    regions = compute_slices(h, w, slice_cfg)
    if merge_cfg.full_inference:
        regions = regions + [SliceRegion(0, 0, h, w)]

    if jobs > 1 and getattr(backend, "concurrency_safe", False):
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_region = list(
                pool.map(lambda r: _run_backend(backend, image, r, upscale), regions)
            )
    else:
        per_region = [_run_backend(backend, image, r, upscale) for r in regions]

    raw: list[Detection] = []
    for region, dets in zip(regions, per_region):
        raw.extend(remap_detections(dets, region, diagnostics))
    if diagnostics is not None:
        diagnostics["slices"] = len(regions) - (1 if merge_cfg.full_inference else 0)
        diagnostics["raw_detections"] = len(raw)
    merged = nms_merge(raw, merge_cfg)
    if diagnostics is not None:
        diagnostics["merged_detections"] = len(merged)
    return merged


def slice_dataset(
    image: np.ndarray,
    gt_boxes: Sequence[tuple[BBox2D, int]],
    slice_cfg: SliceConfig,
    min_area_ratio: float = 0.25,
) -> list[tuple[np.ndarray, list[tuple[BBox2D, int]]]]:
    """Cut an annotated image into training patches (fine-tuning augmentation).

    Ground-truth boxes are clipped to each patch and kept when the
    clipped area is at least ``min_area_ratio`` of the original area;
    kept boxes are expressed in patch-local coordinates.
    """
    image = np.asarray(image)
    if image.ndim != 2 or image.size == 0:
        raise ValueError(f"expected a non-empty 2D image, got shape {image.shape}")
    out = []
    for region in compute_slices(image.shape[0], image.shape[1], slice_cfg):
        local: list[tuple[BBox2D, int]] = []
        for box, class_id in gt_boxes:
            clipped = box.clipped(
                float(region.origin_col),
                float(region.origin_row),
                float(region.origin_col + region.width),
                float(region.origin_row + region.height),
            )
            if clipped is None or box.area <= 0:
                continue
            if clipped.area / box.area < min_area_ratio:
                continue
            local.append(
                (clipped.translated(-float(region.origin_col), -float(region.origin_row)), class_id)
            )
        out.append((region.crop(image).copy(), local))
    return out
