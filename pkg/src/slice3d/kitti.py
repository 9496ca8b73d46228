"""KITTI-format I/O and average-precision evaluation.

File formats (all little quirks follow the benchmark devkit):

* Label files: one object per line, 15 whitespace-separated fields
  (``type truncated occluded alpha x1 y1 x2 y2 h w l x y z rotation_y``)
  plus an optional 16th ``score`` field for detection results. Numeric
  fields print with 2 decimals. Sentinel values such as alpha = -10 or
  dims = -1 appear in real files, so parsing is structurally strict
  (field count, numeric) but does not range-check.
* Calibration files: a ``P2:`` line with the 12 entries of the 3x4 left
  color camera projection matrix, row-major. Intrinsics derive as
  fx = P2[0,0], fy = P2[1,1], cx = P2[0,2], cy = P2[1,2].
* Depth maps: single-channel 16-bit PNG, meters = stored / 256, stored
  0 marks an invalid pixel.
* Velodyne scans: raw little-endian float32 quadruples (x, y, z,
  reflectance), 16 bytes per point.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from PIL import Image

from .geometry import BBox2D, BBox3D, CameraIntrinsics, iou_2d, iou_3d
from .pseudolidar import DepthMap

__all__ = [
    "KittiLabel",
    "KittiCalib",
    "EvalResult",
    "LabelParseError",
    "CalibParseError",
    "DepthPngError",
    "parse_label_file",
    "write_label_file",
    "parse_calib",
    "read_depth_png",
    "write_depth_png",
    "read_velodyne_bin",
    "write_velodyne_bin",
    "evaluate_ap",
    "filter_difficulty",
    "DIFFICULTY_THRESHOLDS",
]

DONTCARE = "DontCare"

# devkit difficulty gates: (min 2D box height px, max occlusion, max truncation)
DIFFICULTY_THRESHOLDS = {
    "easy": (40.0, 0, 0.15),
    "moderate": (25.0, 1, 0.30),
    "hard": (25.0, 2, 0.50),
}


class LabelParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class CalibParseError(ValueError):
    pass


class DepthPngError(ValueError):
    pass


@dataclass(frozen=True)
class KittiLabel:
    """One labeled object. Fields mirror the benchmark label columns."""

    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox: BBox2D
    dims: tuple[float, float, float]  # h, w, l (meters)
    location: tuple[float, float, float]  # x, y, z (camera frame, bottom center)
    rotation_y: float
    score: float | None = None

    def box3d(self) -> BBox3D:
        return BBox3D(self.location, self.dims, self.rotation_y)


def parse_label_file(text: str) -> list[KittiLabel]:
    """Parse a label file; raises LabelParseError with the offending line."""
    labels = []
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) not in (15, 16):
            raise LabelParseError(f"expected 15 or 16 fields, got {len(fields)}", ln)
        try:
            values = [float(v) for v in fields[1:]]
        except ValueError:
            raise LabelParseError("non-numeric field", ln) from None
        labels.append(
            KittiLabel(
                type=fields[0],
                truncated=values[0],
                occluded=int(values[1]),
                alpha=values[2],
                bbox=BBox2D(values[3], values[4], values[5], values[6]),
                dims=(values[7], values[8], values[9]),
                location=(values[10], values[11], values[12]),
                rotation_y=values[13],
                score=values[14] if len(fields) == 16 else None,
            )
        )
    return labels


def write_label_file(labels: Sequence[KittiLabel]) -> str:
    """Serialize labels with the devkit's 2-decimal precision."""
    lines = []
    for lab in labels:
        parts = [
            lab.type,
            f"{lab.truncated:.2f}",
            str(int(lab.occluded)),
            f"{lab.alpha:.2f}",
            f"{lab.bbox.x1:.2f}",
            f"{lab.bbox.y1:.2f}",
            f"{lab.bbox.x2:.2f}",
            f"{lab.bbox.y2:.2f}",
            f"{lab.dims[0]:.2f}",
            f"{lab.dims[1]:.2f}",
            f"{lab.dims[2]:.2f}",
            f"{lab.location[0]:.2f}",
            f"{lab.location[1]:.2f}",
            f"{lab.location[2]:.2f}",
            f"{lab.rotation_y:.2f}",
        ]
        if lab.score is not None:
            parts.append(f"{lab.score:.2f}")
        lines.append(" ".join(parts) + "\n")
    return "".join(lines)


@dataclass(frozen=True)
class KittiCalib:
    """Projection matrix P2 plus the pinhole intrinsics it implies."""

    p2: np.ndarray

    def __post_init__(self) -> None:
        p2 = np.asarray(self.p2, dtype=np.float64).reshape(3, 4)
        if not (p2[0, 0] > 0 and p2[1, 1] > 0):
            raise CalibParseError("P2 focal entries must be positive")
        object.__setattr__(self, "p2", p2)

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(
            fx_px=self.p2[0, 0], fy_px=self.p2[1, 1],
            cx_px=self.p2[0, 2], cy_px=self.p2[1, 2],
        )


def parse_calib(text: str) -> KittiCalib:
    """Extract P2 from a calibration file."""
    for line in text.splitlines():
        if line.startswith("P2:") or line.startswith("P2 "):
            values = line.split(":", 1)[-1].split()
            if len(values) != 12:
                raise CalibParseError(f"P2 must have 12 entries, got {len(values)}")
            try:
                p2 = np.array([float(v) for v in values]).reshape(3, 4)
            except ValueError as exc:
                raise CalibParseError("non-numeric P2 entry") from exc
            return KittiCalib(p2)
    raise CalibParseError("calibration file has no P2 line")


def read_depth_png(data: bytes) -> DepthMap:
    """Decode a 16-bit depth PNG; stored / 256 = meters, 0 = invalid."""
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise DepthPngError(f"not a decodable PNG: {exc}") from exc
    if img.format != "PNG":
        raise DepthPngError(f"expected PNG, got {img.format}")
    if img.mode not in ("I;16", "I;16B", "I"):
        raise DepthPngError(f"expected a 16-bit single-channel PNG, got mode {img.mode}")
    stored = np.asarray(img, dtype=np.uint32)
    depth = stored.astype(np.float64) / 256.0
    return DepthMap(np.where(stored > 0, depth, 0.0), stored > 0)


def write_depth_png(d: DepthMap) -> bytes:
    """Encode as 16-bit PNG: stored = round(depth * 256) clipped to 65535."""
    stored = np.rint(d.depth * 256.0)
    stored = np.clip(stored, 0, 65535).astype(np.uint16)
    stored[~d.valid] = 0
    buf = io.BytesIO()
    Image.fromarray(stored).save(buf, format="PNG")
    return buf.getvalue()


def read_velodyne_bin(data: bytes) -> np.ndarray:
    """Decode a velodyne scan into an (N, 4) float32 array."""
    if len(data) % 16 != 0:
        raise ValueError(f"velodyne payload length {len(data)} not divisible by 16")
    return np.frombuffer(data, dtype="<f4").reshape(-1, 4).copy()


def write_velodyne_bin(points: np.ndarray) -> bytes:
    points = np.asarray(points, dtype="<f4").reshape(-1, 4)
    return points.tobytes()


@dataclass(frozen=True)
class EvalResult:
    """AP plus the interpolated precision over the recall grid."""

    ap: float
    recall: np.ndarray
    precision: np.ndarray
    num_gt: int
    num_det: int


def filter_difficulty(labels: Sequence[KittiLabel], level: str) -> list[KittiLabel]:
    """Keep labels satisfying the devkit gates for a difficulty level."""
    min_height, max_occ, max_trunc = DIFFICULTY_THRESHOLDS[level]
    return [
        lab
        for lab in labels
        if lab.bbox.height >= min_height
        and lab.occluded <= max_occ
        and lab.truncated <= max_trunc
    ]


def _label_iou(det: KittiLabel, gt: KittiLabel, mode: str) -> float:
    if mode == "2d":
        return iou_2d(det.bbox, gt.bbox)
    return iou_3d(det.box3d(), gt.box3d())


def _det_order_key(entry):
    img_idx, det = entry
    b = det.bbox
    return (-(det.score or 0.0), img_idx, b.x1, b.y1, b.x2, b.y2)


def evaluate_ap(
    dets: Sequence[Sequence[KittiLabel]],
    gts: Sequence[Sequence[KittiLabel]],
    iou_threshold: float = 0.5,
    mode: Literal["2d", "3d"] = "2d",
    recall_points: int = 40,
    difficulty: str | None = None,
) -> dict[str, EvalResult]:
    """Average precision per class over a set of images.

    Detections and ground truths align by list index. Matching is
    greedy per image: detections by descending score, each matching the
    highest-IoU unclaimed ground truth of its class when that IoU
    reaches ``iou_threshold``. Precision is interpolated at the
    ``recall_points`` recall values i/N (i = 1..N) and AP is their mean.

    "DontCare" regions never count as ground truth; unmatched detections
    overlapping one at 2D IoU > 0.5 are discarded rather than counted as
    false positives. ``difficulty`` optionally pre-filters the ground
    truth with :func:`filter_difficulty`.
    """
    if len(dets) != len(gts):
        raise ValueError(
            f"detections cover {len(dets)} images but ground truth covers {len(gts)}"
        )
    if recall_points < 1:
        raise ValueError("recall_points must be >= 1")

    classes = sorted(
        {g.type for image in gts for g in image if g.type != DONTCARE}
    )
    results: dict[str, EvalResult] = {}
    recall_grid = np.arange(1, recall_points + 1, dtype=np.float64) / recall_points

    for cls in classes:
        flags: list[tuple[int, KittiLabel, bool]] = []  # (image, det, is_tp)
        num_gt = 0
        num_det = 0
        for img_idx, (img_dets, img_gts) in enumerate(zip(dets, gts)):
            gt_cls = [g for g in img_gts if g.type == cls]
            if difficulty is not None:
                gt_cls = filter_difficulty(gt_cls, difficulty)
            dontcare = [g for g in img_gts if g.type == DONTCARE]
            num_gt += len(gt_cls)
            matched = [False] * len(gt_cls)
            ordered = sorted(
                ((img_idx, dd) for dd in img_dets if dd.type == cls),
                key=_det_order_key,
            )
            num_det += len(ordered)
            for _, det in ordered:
                best, best_iou = -1, iou_threshold
                for g_idx, gt in enumerate(gt_cls):
                    if matched[g_idx]:
                        continue
                    overlap = _label_iou(det, gt, mode)
                    if overlap >= best_iou:
                        best, best_iou = g_idx, overlap
                if best >= 0:
                    matched[best] = True
                    flags.append((img_idx, det, True))
                else:
                    if any(iou_2d(det.bbox, dc.bbox) > 0.5 for dc in dontcare):
                        continue  # inside a DontCare region: neither TP nor FP
                    flags.append((img_idx, det, False))

        flags.sort(key=lambda f: _det_order_key((f[0], f[1])))
        tp = np.cumsum([1.0 if f[2] else 0.0 for f in flags])
        fp = np.cumsum([0.0 if f[2] else 1.0 for f in flags])
        if num_gt == 0:
            continue
        if len(flags) == 0:
            results[cls] = EvalResult(0.0, recall_grid, np.zeros_like(recall_grid), num_gt, num_det)
            continue
        recall = tp / num_gt
        precision = tp / np.maximum(tp + fp, 1e-12)
        interp = np.zeros_like(recall_grid)
        for k, r in enumerate(recall_grid):
            reachable = precision[recall >= r - 1e-12]
            interp[k] = reachable.max() if len(reachable) else 0.0
        results[cls] = EvalResult(float(interp.mean()), recall_grid, interp, num_gt, num_det)
    return results
