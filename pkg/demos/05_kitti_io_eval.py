"""
KITTI-format I/O and average precision
======================================

Round-trips label and calibration text, encodes a depth map as a 16-bit
PNG, and scores detections against ground truth with the interpolated
AP protocol.
"""

from dataclasses import replace

import numpy as np

from slice3d import (
    DepthMap,
    evaluate_ap,
    parse_calib,
    parse_label_file,
    read_depth_png,
    write_depth_png,
    write_label_file,
)

LABELS = (
    "Car 0.00 0 -1.57 100.00 150.00 200.00 250.00 1.50 1.60 3.80 2.00 1.50 20.00 -1.50\n"
    "Pedestrian 0.10 1 0.50 400.00 160.00 430.00 240.00 1.80 0.60 0.80 -5.00 1.60 15.00 0.40\n"
    "DontCare -1 -1 -10 600.00 170.00 640.00 190.00 -1.00 -1.00 -1.00 -1000.00 -1000.00 -1000.00 -10.00\n"
)

CALIB = (
    "P2: 721.5377 0.0 609.5593 44.85728 0.0 721.5377 172.854 0.2163791 "
    "0.0 0.0 1.0 0.002745884\n"
)

labels = parse_label_file(LABELS)
print(f"parsed {len(labels)} labels; first: {labels[0].type}, "
      f"location {labels[0].location}, rotation_y {labels[0].rotation_y}")
canonical = write_label_file(labels)
assert write_label_file(parse_label_file(canonical)) == canonical
print("label write/parse round trip is byte-stable at the printed precision")

calib = parse_calib(CALIB)
intr = calib.intrinsics
print(f"\ncalibration P2 -> fx {intr.fx_px}, fy {intr.fy_px}, "
      f"cx {intr.cx_px}, cy {intr.cy_px}")

# Depth maps quantize at 1/256 m in the 16-bit PNG convention.
rng = np.random.default_rng(5)
depth = rng.uniform(2.0, 80.0, (64, 64))
dmap = DepthMap(depth, np.ones_like(depth, dtype=bool))
back = read_depth_png(write_depth_png(dmap))
print(f"depth PNG round trip: max error {np.abs(back.depth - depth).max():.6f} m "
      f"(bound 1/512 = {1 / 512:.6f})")

# AP: perfect detections, then one miss plus one false positive.
gt = [lab for lab in labels if lab.type != "DontCare"]
perfect = [replace(lab, score=1.0) for lab in gt]
print("\nAP with detections copied from ground truth:")
for cls, res in sorted(evaluate_ap([perfect], [gt]).items()):
    print(f"  {cls:<12} {res.ap:.3f}")

partial = [replace(gt[0], score=0.9)]  # finds the car, misses the pedestrian
false_positive = replace(
    gt[0], score=0.8,
    bbox=type(gt[0].bbox)(800.0, 100.0, 850.0, 150.0),
)
print("AP with one hit, one miss, one false positive:")
for cls, res in sorted(evaluate_ap([partial + [false_positive]], [gt]).items()):
    print(f"  {cls:<12} {res.ap:.3f}  ({res.num_gt} gt, {res.num_det} det)")
