import math

import numpy as np
import pytest

from slice3d.anchors import (
    BACKGROUND,
    IGNORE,
    Anchor,
    AnchorSpec,
    RegressionDeltas,
    decode_deltas,
    encode_deltas,
    generate_anchors,
    match_anchors,
)
from slice3d.geometry import BBox2D, BBox3D, CameraIntrinsics

INTR = CameraIntrinsics(fx_px=700.0, fy_px=700.0, cx_px=320.0, cy_px=240.0)


def square_anchor(cx, cy, size, z=20.0, dims=(1.5, 1.6, 3.9), yaw=0.0):
    half = size / 2
    return Anchor(BBox2D(cx - half, cy - half, cx + half, cy + half), z, dims, yaw)


class TestGenerateAnchors:
    def test_grid_example(self):
        spec = AnchorSpec(scales=(16.0,), aspect_ratios=(1.0,))
        anchors = generate_anchors(32, 32, 16, spec)
        centers = [a.bbox2d.center for a in anchors]
        assert centers == [(8, 8), (24, 8), (8, 24), (24, 24)]

    def test_unit_ratio_size(self):
        spec = AnchorSpec(scales=(16.0,), aspect_ratios=(1.0,))
        [a, *_] = generate_anchors(32, 32, 16, spec)
        assert a.bbox2d.width == pytest.approx(16.0)
        assert a.bbox2d.height == pytest.approx(16.0)

    def test_count_closed_form(self):
        spec = AnchorSpec(scales=(8.0, 16.0, 32.0), aspect_ratios=(0.5, 1.0, 2.0))
        anchors = generate_anchors(100, 60, 16, spec)
        assert len(anchors) == math.ceil(100 / 16) * math.ceil(60 / 16) * 9

    def test_aspect_ratio_preserves_area(self):
        spec = AnchorSpec(scales=(16.0,), aspect_ratios=(2.0,))
        [a, *_] = generate_anchors(32, 32, 16, spec)
        assert a.bbox2d.width * a.bbox2d.height == pytest.approx(256.0)
        assert a.bbox2d.width / a.bbox2d.height == pytest.approx(2.0)

    def test_border_anchors_flagged_not_clipped(self):
        spec = AnchorSpec(scales=(64.0,), aspect_ratios=(1.0,))
        anchors = generate_anchors(32, 32, 16, spec)
        assert all(a.crosses_border for a in anchors)
        assert anchors[0].bbox2d.x1 < 0  # retained unclipped

    def test_lattice_regularity(self):
        spec = AnchorSpec(scales=(8.0,), aspect_ratios=(1.0,))
        anchors = generate_anchors(64, 64, 8, spec)
        xs = sorted({a.bbox2d.center[0] for a in anchors})
        assert np.allclose(np.diff(xs), 8.0)

    def test_empty_spec_rejected(self):
        with pytest.raises(ValueError):
            AnchorSpec(scales=(), aspect_ratios=(1.0,))


class TestMatchAnchors:
    def test_identical_box_is_foreground(self):
        anchor = square_anchor(20, 20, 16)
        out = match_anchors([anchor], [anchor.bbox2d])
        assert out.tolist() == [0]

    def test_disjoint_is_background(self):
        anchor = square_anchor(20, 20, 8)
        out = match_anchors([anchor], [BBox2D(100, 100, 120, 120)], iou_bg=0.3)
        # the gt still claims its best anchor, so add a second anchor nearer to it
        near = square_anchor(110, 110, 20)
        out = match_anchors([anchor, near], [BBox2D(100, 100, 120, 120)], iou_bg=0.3)
        assert out[0] == BACKGROUND
        assert out[1] == 0

    def test_between_thresholds_is_ignore(self):
        anchor = square_anchor(8, 8, 16)  # box (0,0,16,16)
        gt = BBox2D(0, 0, 16, 10)  # IoU = 10/16 = 0.625
        other = square_anchor(8, 5, 10)
        out = match_anchors([anchor, other], [gt], iou_fg=0.7, iou_bg=0.3)
        assert out[0] == IGNORE or out[0] == 0  # may be claimed as best

    def test_every_gt_gets_an_anchor(self):
        spec = AnchorSpec(scales=(16.0,), aspect_ratios=(1.0,))
        anchors = generate_anchors(64, 64, 16, spec)
        gts = [BBox2D(1, 1, 9, 9), BBox2D(30, 30, 50, 50)]
        out = match_anchors(anchors, gts)
        for g in range(len(gts)):
            assert (out == g).any()

    def test_no_anchor_both_fg_and_bg(self):
        # assignment is a single label per anchor by construction
        spec = AnchorSpec(scales=(16.0,), aspect_ratios=(1.0,))
        anchors = generate_anchors(64, 64, 16, spec)
        out = match_anchors(anchors, [BBox2D(10, 10, 26, 26)])
        assert out.shape == (len(anchors),)

    def test_accepts_triples(self):
        anchor = square_anchor(20, 20, 16)
        gt3d = BBox3D((0, 1, 20), (1.5, 1.6, 3.9), 0.0)
        out = match_anchors([anchor], [(anchor.bbox2d, gt3d, 0)])
        assert out.tolist() == [0]

    def test_threshold_order_enforced(self):
        with pytest.raises(ValueError):
            match_anchors([], [], iou_fg=0.3, iou_bg=0.5)


class TestDeltaCodec:
    def test_zero_deltas_for_matching_gt(self):
        anchor = square_anchor(100, 80, 32, z=15.0, dims=(1.4, 1.7, 4.2), yaw=0.2)
        prior_center = anchor.prior_center(INTR)
        gt3d = BBox3D(tuple(prior_center), (1.4, 1.7, 4.2), 0.2)
        deltas = encode_deltas(anchor, anchor.bbox2d, gt3d, INTR)
        for value in (deltas.dx, deltas.dy, deltas.dw, deltas.dh,
                      deltas.dx3, deltas.dy3, deltas.dz,
                      deltas.dh3, deltas.dw3, deltas.dl3, deltas.dyaw):
            assert value == pytest.approx(0.0, abs=1e-12)

    def test_double_width_gives_log2(self):
        anchor = square_anchor(100, 80, 32)
        gt2d = BBox2D(100 - 32, 80 - 16, 100 + 32, 80 + 16)  # 2x wide
        gt3d = BBox3D(tuple(anchor.prior_center(INTR)), anchor.prior_dims, 0.0)
        deltas = encode_deltas(anchor, gt2d, gt3d, INTR)
        assert deltas.dw == pytest.approx(math.log(2))
        assert deltas.dh == pytest.approx(0.0)

    def test_depth_delta_additive(self):
        anchor = square_anchor(100, 80, 32, z=10.0)
        deltas = RegressionDeltas(0, 0, 0, 0, 0, 0, 5.0, 0, 0, 0, 0)
        _, box3d = decode_deltas(anchor, deltas, INTR)
        assert box3d.center[2] == pytest.approx(15.0)

    def test_zero_deltas_reproduce_priors(self):
        anchor = square_anchor(100, 80, 32, z=12.0, dims=(1.3, 1.5, 4.0), yaw=-0.4)
        zero = RegressionDeltas(0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0)
        box2d, box3d = decode_deltas(anchor, zero, INTR)
        assert box2d == anchor.bbox2d
        assert box3d.dims == pytest.approx(anchor.prior_dims)
        assert box3d.yaw == pytest.approx(-0.4)
        assert box3d.center == pytest.approx(tuple(anchor.prior_center(INTR)))

    def test_roundtrip_property(self):
        rng = np.random.default_rng(31)
        for _ in range(10_000):
            cx, cy = rng.uniform(0, 640), rng.uniform(0, 480)
            anchor = square_anchor(
                cx, cy, rng.uniform(8, 128),
                z=rng.uniform(5, 60),
                dims=tuple(rng.uniform(0.5, 5, 3)),
                yaw=rng.uniform(-math.pi, math.pi),
            )
            gx, gy = cx + rng.uniform(-20, 20), cy + rng.uniform(-20, 20)
            gw, gh = rng.uniform(4, 200), rng.uniform(4, 200)
            gt2d = BBox2D(gx - gw / 2, gy - gh / 2, gx + gw / 2, gy + gh / 2)
            gt3d = BBox3D(
                (rng.uniform(-30, 30), rng.uniform(-5, 5), rng.uniform(1, 80)),
                tuple(rng.uniform(0.5, 5, 3)),
                rng.uniform(-math.pi, math.pi),
            )
            deltas = encode_deltas(anchor, gt2d, gt3d, INTR)
            back2d, back3d = decode_deltas(anchor, deltas, INTR)
            assert back2d.x1 == pytest.approx(gt2d.x1, abs=1e-9)
            assert back2d.y2 == pytest.approx(gt2d.y2, abs=1e-9)
            np.testing.assert_allclose(back3d.center, gt3d.center, atol=1e-9)
            np.testing.assert_allclose(back3d.dims, gt3d.dims, rtol=1e-12)
            assert abs(back3d.yaw - gt3d.yaw) < 1e-12

    def test_translation_invariance_2d(self):
        anchor = square_anchor(100, 80, 32)
        gt2d = BBox2D(90, 70, 130, 110)
        gt3d = BBox3D((1, 1, 20), (1.5, 1.6, 3.9), 0.1)
        base = encode_deltas(anchor, gt2d, gt3d, INTR)
        shifted_anchor = Anchor(
            anchor.bbox2d.translated(17, -5), anchor.prior_z,
            anchor.prior_dims, anchor.prior_yaw,
        )
        shifted = encode_deltas(shifted_anchor, gt2d.translated(17, -5), gt3d, INTR)
        assert shifted.dx == pytest.approx(base.dx, abs=1e-12)
        assert shifted.dy == pytest.approx(base.dy, abs=1e-12)
        assert shifted.dw == pytest.approx(base.dw, abs=1e-12)
        assert shifted.dh == pytest.approx(base.dh, abs=1e-12)

    def test_extreme_log_deltas_clamped(self):
        anchor = square_anchor(100, 80, 32)
        wild = RegressionDeltas(0, 0, 50.0, -50.0, 0, 0, 0, 0, 0, 0, 0)
        box2d, _ = decode_deltas(anchor, wild, INTR)
        assert box2d.width == pytest.approx(32 * math.exp(8))
        assert box2d.height == pytest.approx(32 * math.exp(-8))

    def test_zero_size_gt_rejected(self):
        anchor = square_anchor(100, 80, 32)
        flat = BBox2D(0, 0, 10, 0)
        gt3d = BBox3D((0, 0, 10), (1, 1, 1), 0.0)
        with pytest.raises(ValueError):
            encode_deltas(anchor, flat, gt3d, INTR)
