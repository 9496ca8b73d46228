"""Shared 2D/3D anchor geometry: grids, assignment, box-delta codecs.

Anchors are template boxes tiled over a regular image grid; each one
also carries a 3D prior (depth, metric dims, yaw). A ground-truth pair
(2D box, 3D box) is expressed relative to its anchor as regression
deltas, and the codec is exactly invertible: the anchor's implied 3D
position is the backprojection of its 2D center at the prior depth, so
the 3D center offsets live in meters. No learned scoring lives here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import (
    BBox2D,
    BBox3D,
    CameraIntrinsics,
    Point3,
    backproject_pixel,
    iou_2d,
    wrap_angle,
)

__all__ = [
    "AnchorSpec",
    "Anchor",
    "RegressionDeltas",
    "BACKGROUND",
    "IGNORE",
    "generate_anchors",
    "match_anchors",
    "encode_deltas",
    "decode_deltas",
]

BACKGROUND = -1
IGNORE = -2

# log-size deltas are clamped to this magnitude on decode (e^8 ~ 2981x)
MAX_LOG_DELTA = 8.0


def _per_template(value, n: int, name: str) -> list:
    """Broadcast a scalar/single prior to n templates, or validate length."""
    if isinstance(value, (int, float)):
        return [float(value)] * n
    values = list(value)
    if len(values) > 0 and isinstance(values[0], (int, float)) and name == "dims":
        values = [tuple(float(v) for v in value)] * n  # a single (h, w, l)
    if len(values) != n:
        raise ValueError(f"{name} prior must be scalar or length {n}, got {len(values)}")
    return values


@dataclass(frozen=True)
class AnchorSpec:
    """Anchor template family shared between the 2D and 3D heads.

    ``scales`` are box sizes in pixels and ``aspect_ratios`` are
    width/height; a template of scale s and ratio r spans
    (s*sqrt(r), s/sqrt(r)) as (w, h), preserving area s^2. The 3D priors
    (depth in meters, dims (h, w, l) in meters, yaw in radians) may be a
    single value shared by all templates or one value per template in
    scale-major, ratio-minor order.
    """

    scales: tuple[float, ...]
    aspect_ratios: tuple[float, ...]
    depth_prior: float | tuple[float, ...] = 20.0
    dims_prior: tuple = (1.5, 1.6, 3.9)
    yaw_prior: float | tuple[float, ...] = 0.0

    def __post_init__(self) -> None:
        if not self.scales or not self.aspect_ratios:
            raise ValueError("anchor spec needs at least one scale and one ratio")
        if any(s <= 0 for s in self.scales) or any(r <= 0 for r in self.aspect_ratios):
            raise ValueError("scales and aspect ratios must be positive")
        n = len(self.scales) * len(self.aspect_ratios)
        depths = _per_template(self.depth_prior, n, "depth")
        dims = _per_template(self.dims_prior, n, "dims")
        yaws = _per_template(self.yaw_prior, n, "yaw")
        if any(d <= 0 for d in depths):
            raise ValueError("depth priors must be positive")
        if any(v <= 0 for dim in dims for v in dim):
            raise ValueError("dims priors must be positive")
        object.__setattr__(self, "_depths", tuple(depths))
        object.__setattr__(self, "_dims", tuple(tuple(d) for d in dims))
        object.__setattr__(self, "_yaws", tuple(yaws))

    @property
    def num_templates(self) -> int:
        return len(self.scales) * len(self.aspect_ratios)

    def templates(self) -> list[tuple[float, float, float, tuple, float]]:
        """(w2d, h2d, depth, dims, yaw) per template, scale-major order."""
        out = []
        idx = 0
        for s in self.scales:
            for r in self.aspect_ratios:
                root = math.sqrt(r)
                out.append((s * root, s / root, self._depths[idx], self._dims[idx], self._yaws[idx]))
                idx += 1
        return out


@dataclass(frozen=True)
class Anchor:
    """One placed template: a 2D box plus its 3D prior (z, dims, yaw).

    ``crosses_border`` flags anchors extending past the image; they are
    kept unclipped so the delta codec stays invertible.
    """

    bbox2d: BBox2D
    prior_z: float
    prior_dims: tuple[float, float, float]
    prior_yaw: float
    crosses_border: bool = False

    def prior_center(self, intr: CameraIntrinsics) -> Point3:
        """Implied 3D position: the 2D center backprojected at the prior depth."""
        cx, cy = self.bbox2d.center
        return backproject_pixel(cy, cx, self.prior_z, intr)


@dataclass(frozen=True)
class RegressionDeltas:
    """Offsets of a ground-truth pair relative to an anchor.

    2D: (dx, dy) center offsets normalized by anchor size, (dw, dh) log
    size ratios. 3D: (dx3, dy3, dz) metric center offsets from the
    anchor's implied 3D position, (dh3, dw3, dl3) log dim ratios, and a
    wrapped yaw offset.
    """

    dx: float
    dy: float
    dw: float
    dh: float
    dx3: float
    dy3: float
    dz: float
    dh3: float
    dw3: float
    dl3: float
    dyaw: float

    def __post_init__(self) -> None:
        fields = (self.dx, self.dy, self.dw, self.dh, self.dx3, self.dy3,
                  self.dz, self.dh3, self.dw3, self.dl3, self.dyaw)
        if not all(math.isfinite(v) for v in fields):
            raise ValueError("deltas must be finite")


def generate_anchors(
    image_h: int,
    image_w: int,
    feature_stride: int,
    spec: AnchorSpec,
) -> list[Anchor]:
    """Place one anchor per (grid cell, template) over the image.

    Cells form a ceil(h/stride) x ceil(w/stride) lattice with centers at
    (col*stride + stride/2, row*stride + stride/2). Anchors are emitted
    row-major over cells, templates innermost.
    """
    if feature_stride < 1:
        raise ValueError("feature_stride must be >= 1")
    if image_h < 1 or image_w < 1:
        raise ValueError("image dimensions must be positive")
    templates = spec.templates()
    rows = -(-image_h // feature_stride)
    cols = -(-image_w // feature_stride)
    half = feature_stride / 2.0
    anchors = []
    for row in range(rows):
        cy = row * feature_stride + half
        for col in range(cols):
            cx = col * feature_stride + half
            for w2d, h2d, depth, dims, yaw in templates:
                box = BBox2D(cx - w2d / 2, cy - h2d / 2, cx + w2d / 2, cy + h2d / 2)
                outside = box.x1 < 0 or box.y1 < 0 or box.x2 > image_w or box.y2 > image_h
                anchors.append(Anchor(box, depth, tuple(dims), yaw, outside))
    return anchors


def match_anchors(
    anchors: Sequence[Anchor],
    gt: Sequence,
    iou_fg: float = 0.5,
    iou_bg: float = 0.3,
) -> np.ndarray:
    """Assign each anchor to a ground truth, background, or ignore.

    ``gt`` entries are BBox2D or tuples whose first element is the 2D
    box. An anchor is foreground toward its max-IoU ground truth when
    that IoU >= iou_fg, background when its max IoU < iou_bg, ignored in
    between. Additionally every ground truth claims its best anchor
    (ties: lowest anchor index); when two ground truths share a best
    anchor, the later one falls back to its next-best unclaimed anchor,
    so no ground truth goes unmatched while anchors remain.

    Returns an int array: gt index >= 0, BACKGROUND (-1), IGNORE (-2).
    """
    if iou_bg > iou_fg:
        raise ValueError("iou_bg must not exceed iou_fg")
    boxes = [g[0] if isinstance(g, tuple) else g for g in gt]
    n_anchor, n_gt = len(anchors), len(boxes)
    assignment = np.full(n_anchor, BACKGROUND, dtype=np.int64)
    if n_anchor == 0 or n_gt == 0:
        return assignment
    iou = np.zeros((n_anchor, n_gt))
    for a, anchor in enumerate(anchors):
        for g, box in enumerate(boxes):
            iou[a, g] = iou_2d(anchor.bbox2d, box)
    best_gt = iou.argmax(axis=1)
    best_iou = iou[np.arange(n_anchor), best_gt]
    assignment[best_iou >= iou_fg] = best_gt[best_iou >= iou_fg]
    assignment[(best_iou < iou_bg)] = BACKGROUND
    between = (best_iou >= iou_bg) & (best_iou < iou_fg)
    assignment[between] = IGNORE
    # every gt claims its best unclaimed anchor, even below threshold
    claimed: dict[int, int] = {}
    for g in range(n_gt):
        for a_star in np.argsort(-iou[:, g], kind="stable"):
            if int(a_star) not in claimed:
                claimed[int(a_star)] = g
                break
    for a_star, g in claimed.items():
        assignment[a_star] = g
    return assignment


def encode_deltas(
    anchor: Anchor,
    gt2d: BBox2D,
    gt3d: BBox3D,
    intr: CameraIntrinsics,
) -> RegressionDeltas:
    """Express a matched ground-truth pair as deltas from its anchor."""
    if gt2d.width <= 0 or gt2d.height <= 0:
        raise ValueError(f"ground-truth 2D box must have positive size, got {gt2d}")
    ax, ay = anchor.bbox2d.center
    aw, ah = anchor.bbox2d.width, anchor.bbox2d.height
    gx, gy = gt2d.center
    prior = anchor.prior_center(intr)
    ph, pw, pl = anchor.prior_dims
    gh3, gw3, gl3 = gt3d.dims
    return RegressionDeltas(
        dx=(gx - ax) / aw,
        dy=(gy - ay) / ah,
        dw=math.log(gt2d.width / aw),
        dh=math.log(gt2d.height / ah),
        dx3=gt3d.center[0] - prior.x,
        dy3=gt3d.center[1] - prior.y,
        dz=gt3d.center[2] - prior.z,
        dh3=math.log(gh3 / ph),
        dw3=math.log(gw3 / pw),
        dl3=math.log(gl3 / pl),
        dyaw=wrap_angle(gt3d.yaw - anchor.prior_yaw),
    )


def decode_deltas(
    anchor: Anchor,
    deltas: RegressionDeltas,
    intr: CameraIntrinsics,
) -> tuple[BBox2D, BBox3D]:
    """Exact algebraic inverse of :func:`encode_deltas`.

    Log-size deltas are clamped to |delta| <= 8 to keep exp() sane for
    extreme regression outputs.
    """
    ax, ay = anchor.bbox2d.center
    aw, ah = anchor.bbox2d.width, anchor.bbox2d.height
    cx = ax + deltas.dx * aw
    cy = ay + deltas.dy * ah
    w = aw * math.exp(_clamp_log(deltas.dw))
    h = ah * math.exp(_clamp_log(deltas.dh))
    box2d = BBox2D(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
    prior = anchor.prior_center(intr)
    ph, pw, pl = anchor.prior_dims
    box3d = BBox3D(
        center=(prior.x + deltas.dx3, prior.y + deltas.dy3, prior.z + deltas.dz),
        dims=(
            ph * math.exp(_clamp_log(deltas.dh3)),
            pw * math.exp(_clamp_log(deltas.dw3)),
            pl * math.exp(_clamp_log(deltas.dl3)),
        ),
        yaw=wrap_angle(anchor.prior_yaw + deltas.dyaw),
    )
    return box2d, box3d


def _clamp_log(v: float) -> float:
    return max(-MAX_LOG_DELTA, min(MAX_LOG_DELTA, v))
