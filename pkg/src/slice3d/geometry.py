"""Pinhole camera geometry, stereo depth conversion, and box types.

Conventions used throughout the package:

* Camera frame: x right, y down, z forward (optical axis), meters.
* Image frame: pixel (i, j) = (row, column), origin at the top left.
  2D boxes store (x1, y1, x2, y2) where x is the column axis and y the
  row axis.
* 3D boxes carry 7 degrees of freedom. ``center`` sits at the middle of
  the *bottom* face, ``dims`` is (h, w, l), and ``yaw`` rotates about
  the camera y axis, so a box spans ``[y - h, y]`` vertically. At yaw 0
  the length l runs along +x and the width w along +z. The yaw rotation
  matrix is ``R_y = [[cos, 0, sin], [0, 1, 0], [-sin, 0, cos]]``.

Everything here is a pure function over 64-bit floats; the round-trip
tolerances (1e-12 for disparity/depth, 1e-9 for project/backproject)
rely on double precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from shapely.geometry import Polygon

__all__ = [
    "CameraIntrinsics",
    "StereoRig",
    "Point3",
    "BBox2D",
    "Detection",
    "BBox3D",
    "wrap_angle",
    "disparity_to_depth",
    "depth_to_disparity",
    "backproject_pixel",
    "project_point",
    "box3d_corners",
    "bev_polygon",
    "iou_2d",
    "iou_3d",
]


def wrap_angle(angle: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics with focal lengths and principal point in pixels.

    ``fx_px`` and ``fy_px`` are the focal length divided by the physical
    pixel pitch, which is the quantity calibration files provide.
    """

    fx_px: float
    fy_px: float
    cx_px: float
    cy_px: float

    def __post_init__(self) -> None:
        if not (self.fx_px > 0 and self.fy_px > 0):
            raise ValueError("focal lengths must be positive")
        if not all(math.isfinite(v) for v in (self.fx_px, self.fy_px, self.cx_px, self.cy_px)):
            raise ValueError("intrinsics must be finite")


@dataclass(frozen=True)
class StereoRig:
    """Stereo pair described by the baseline between camera centers."""

    baseline_m: float

    def __post_init__(self) -> None:
        if not (self.baseline_m > 0 and math.isfinite(self.baseline_m)):
            raise ValueError("baseline must be positive and finite")


class Point3(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class BBox2D:
    """Axis-aligned pixel box. x runs along columns, y along rows."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x1, self.y1, self.x2, self.y2)):
            raise ValueError("box coordinates must be finite")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"box must satisfy x1 <= x2 and y1 <= y2, got {self}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def translated(self, dx: float, dy: float) -> "BBox2D":
        return BBox2D(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def clipped(self, xmin: float, ymin: float, xmax: float, ymax: float) -> "BBox2D | None":
        """Clip to a window; returns None when there is no overlap at all."""
        x1 = max(self.x1, xmin)
        y1 = max(self.y1, ymin)
        x2 = min(self.x2, xmax)
        y2 = min(self.y2, ymax)
        if x2 < x1 or y2 < y1:
            return None
        return BBox2D(x1, y1, x2, y2)


@dataclass(frozen=True)
class Detection:
    """A scored 2D detection."""

    bbox: BBox2D
    score: float
    class_id: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if self.class_id < 0:
            raise ValueError("class_id must be non-negative")


@dataclass(frozen=True)
class BBox3D:
    """7-DoF box: bottom-face center (x, y, z), dims (h, w, l), yaw.

    Yaw is normalized into [-pi, pi) on construction.
    """

    center: tuple[float, float, float]
    dims: tuple[float, float, float]
    yaw: float

    def __post_init__(self) -> None:
        h, w, l = self.dims
        if not (h > 0 and w > 0 and l > 0):
            raise ValueError(f"dims must be positive, got {self.dims}")
        if not all(math.isfinite(v) for v in (*self.center, *self.dims, self.yaw)):
            raise ValueError("box fields must be finite")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def volume(self) -> float:
        h, w, l = self.dims
        return h * w * l


def disparity_to_depth(disparity_px: float, intr: CameraIntrinsics, rig: StereoRig) -> float:
    """Convert stereo disparity in pixels to metric depth.

    Depth Z = fx * T / D, where fx is the pixel focal length and T the
    baseline. Raises ValueError for non-positive or non-finite disparity.
    """
    if not (disparity_px > 0 and math.isfinite(disparity_px)):
        raise ValueError(f"disparity must be positive and finite, got {disparity_px}")
    return intr.fx_px * rig.baseline_m / disparity_px


def depth_to_disparity(depth_m: float, intr: CameraIntrinsics, rig: StereoRig) -> float:
    """Inverse of :func:`disparity_to_depth`."""
    if not (depth_m > 0 and math.isfinite(depth_m)):
        raise ValueError(f"depth must be positive and finite, got {depth_m}")
    return intr.fx_px * rig.baseline_m / depth_m


def backproject_pixel(i: float, j: float, depth_m: float, intr: CameraIntrinsics) -> Point3:
    """Lift pixel (row i, col j) at a metric depth into camera coordinates.

    x = (j - cx) * Z / fx, y = (i - cy) * Z / fy, z = Z.
    """
    if not (depth_m > 0 and math.isfinite(depth_m)):
        raise ValueError(f"depth must be positive and finite, got {depth_m}")
    x = (j - intr.cx_px) * depth_m / intr.fx_px
    y = (i - intr.cy_px) * depth_m / intr.fy_px
    return Point3(x, y, depth_m)


def project_point(p: Point3, intr: CameraIntrinsics) -> tuple[float, float, float]:
    """Project a camera-frame point to (row i, col j, depth z).

    Raises ValueError for points at or behind the camera (z <= 0).
    """
    if not (p.z > 0 and math.isfinite(p.z)):
        raise ValueError(f"point lies behind the camera, z={p.z}")
    j = p.x * intr.fx_px / p.z + intr.cx_px
    i = p.y * intr.fy_px / p.z + intr.cy_px
    return (i, j, p.z)


def _yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


# Local corner template. Bottom face first (y = 0), counterclockwise when
# viewed from above, then the top face (y = -h) in the same x/z order:
#   0: (+l/2, +w/2)  1: (+l/2, -w/2)  2: (-l/2, -w/2)  3: (-l/2, +w/2)
_CORNER_SIGNS = np.array(
    [
        [+1, +1], [+1, -1], [-1, -1], [-1, +1],  # bottom, y = 0
        [+1, +1], [+1, -1], [-1, -1], [-1, +1],  # top, y = -h
    ],
    dtype=float,
)


def box3d_corners(box: BBox3D) -> np.ndarray:
    """Return the 8 corners of a 3D box as an (8, 3) array.

    Corners 0-3 are the bottom face (y = center.y), 4-7 the top face
    (y = center.y - h); see ``_CORNER_SIGNS`` for the in-plane order.
    """
    h, w, l = box.dims
    local = np.empty((8, 3))
    local[:, 0] = _CORNER_SIGNS[:, 0] * (l / 2.0)
    local[:, 1] = np.array([0.0] * 4 + [-h] * 4)
    local[:, 2] = _CORNER_SIGNS[:, 1] * (w / 2.0)
    return np.asarray(box.center) + local @ _yaw_matrix(box.yaw).T


def bev_polygon(box: BBox3D) -> np.ndarray:
    """Bird's-eye-view footprint: (4, 2) array of (x, z) corners."""
    corners = box3d_corners(box)
    return corners[:4][:, [0, 2]]


def iou_2d(a: BBox2D, b: BBox2D) -> float:
    """Intersection-over-union of two axis-aligned boxes; 0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def iou_3d(a: BBox3D, b: BBox3D) -> float:
    """Volumetric IoU of two yawed boxes.

    Intersection = (rotated BEV polygon overlap) x (vertical interval
    overlap), with the vertical extent [y - h, y]. Degenerate overlaps
    return 0.
    """
    ya_top, ya_bot = a.center[1] - a.dims[0], a.center[1]
    yb_top, yb_bot = b.center[1] - b.dims[0], b.center[1]
    inter_h = min(ya_bot, yb_bot) - max(ya_top, yb_top)
    if inter_h <= 0:
        return 0.0
    poly_a = Polygon(bev_polygon(a))
    poly_b = Polygon(bev_polygon(b))
    inter_area = poly_a.intersection(poly_b).area
    if inter_area <= 0:
        return 0.0
    inter_vol = inter_area * inter_h
    union = a.volume + b.volume - inter_vol
    if union <= 0:
        return 0.0
    return inter_vol / union
