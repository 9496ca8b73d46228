"""
Pseudo-LiDAR: depth maps to point clouds to 3D boxes
====================================================

Back-projects a depth map into a point cloud, pools 3D coordinates over
a region of interest, selects the points inside a 2D box's frustum, and
fits a yawed 3D box to them. Writes the cloud as ASCII PLY.
"""

import math
from pathlib import Path

import numpy as np

from slice3d import (
    BBox2D,
    BBox3D,
    CameraIntrinsics,
    DepthMap,
    depth_to_cloud,
    fit_pseudo_label,
    front_view_encode,
    frustum_points,
    roi_mean_pool,
)
from slice3d.geometry import box3d_corners, project_point, Point3
from slice3d.pseudolidar import cloud_from_points, write_ply

intr = CameraIntrinsics(fx_px=721.5377, fy_px=721.5377, cx_px=609.5593, cy_px=172.854)

# A synthetic scene: a fronto-parallel ground of increasing depth with a
# box-shaped object 20 m out.
rows, cols = 370, 1224
depth = np.full((rows, cols), 60.0)
depth += np.linspace(0, 15, rows)[:, None]  # mild vertical gradient
dmap = DepthMap(depth, np.ones_like(depth, dtype=bool))

cloud = depth_to_cloud(dmap, intr, sample_stride=4)
print(f"depth map {rows}x{cols} -> {len(cloud)} points (stride 4)")

enc = front_view_encode(dmap, intr)
print(f"front-view encoding: channels {enc.channels.shape}, "
      f"z-channel equals the depth map: {np.array_equal(enc.channels[..., 2], dmap.depth)}")

roi = BBox2D(500, 100, 700, 300)
means, counts = roi_mean_pool(dmap, intr, roi, grid_h=2, grid_w=2)
print("\nRoI mean pooling over a 2x2 grid (mean x/y/z per cell):")
for gr in range(2):
    for gc in range(2):
        x, y, z = means[gr, gc]
        print(f"  cell ({gr},{gc}): ({x:+7.2f}, {y:+7.2f}, {z:7.2f}) m over {counts[gr, gc]} px")

# Fit a 3D box to frustum points of a known object. Sample the object
# interior directly (this is what a LiDAR sweep of a car roughly looks
# like after frustum selection).
true_box = BBox3D(center=(1.5, 1.7, 22.0), dims=(1.5, 1.7, 4.3), yaw=0.5)
rng = np.random.default_rng(3)
h, w, l = true_box.dims
local = np.column_stack([
    rng.uniform(-l / 2, l / 2, 4000),
    rng.uniform(-h, 0, 4000),
    rng.uniform(-w / 2, w / 2, 4000),
])
c, s = math.cos(true_box.yaw), math.sin(true_box.yaw)
rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
object_cloud = cloud_from_points(local @ rot.T + np.asarray(true_box.center), intr)

# 2D box = projected hull of the true 3D corners
ijs = [project_point(Point3(*p), intr) for p in box3d_corners(true_box)]
roi2d = BBox2D(min(j for _, j, _ in ijs), min(i for i, _, _ in ijs),
               max(j for _, j, _ in ijs), max(i for i, _, _ in ijs))
selected = frustum_points(object_cloud, roi2d, intr)
fitted = fit_pseudo_label(selected.points)

print(f"\nfrustum selection kept {len(selected)}/{len(object_cloud)} points")
print(f"true box:   center {true_box.center}, dims {true_box.dims}, yaw {true_box.yaw:.3f}")
print(f"fitted box: center ({fitted.center[0]:.3f}, {fitted.center[1]:.3f}, "
      f"{fitted.center[2]:.3f}), dims ({fitted.dims[0]:.3f}, {fitted.dims[1]:.3f}, "
      f"{fitted.dims[2]:.3f}), yaw {fitted.yaw:.3f}")

out_dir = Path("demo_output")
out_dir.mkdir(exist_ok=True)
ply_path = out_dir / "object_cloud.ply"
ply_path.write_text(write_ply(selected))
print(f"\nwrote {ply_path} ({len(selected)} vertices)")
