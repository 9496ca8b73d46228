import math

import numpy as np
import pytest

from slice3d.geometry import BBox2D
from slice3d.kitti import (
    CalibParseError,
    DepthPngError,
    KittiLabel,
    LabelParseError,
    evaluate_ap,
    filter_difficulty,
    parse_calib,
    parse_label_file,
    read_depth_png,
    read_velodyne_bin,
    write_depth_png,
    write_label_file,
    write_velodyne_bin,
)
from slice3d.pseudolidar import DepthMap

CAR_LINE = (
    "Car 0.00 0 -1.57 100.00 150.00 200.00 250.00 "
    "1.50 1.60 3.80 2.00 1.50 20.00 -1.50\n"
)

SAMPLE_CALIB = (
    "P0: 721.5377 0.0 609.5593 0.0 0.0 721.5377 172.854 0.0 0.0 0.0 1.0 0.0\n"
    "P2: 721.5377 0.0 609.5593 44.85728 0.0 721.5377 172.854 0.2163791 "
    "0.0 0.0 1.0 0.002745884\n"
)


def make_label(cls="Car", bbox=(0, 0, 50, 50), score=None, **kw):
    defaults = dict(
        type=cls,
        truncated=0.0,
        occluded=0,
        alpha=0.0,
        bbox=BBox2D(*bbox),
        dims=(1.5, 1.6, 3.8),
        location=(2.0, 1.5, 20.0),
        rotation_y=-1.5,
        score=score,
    )
    defaults.update(kw)
    return KittiLabel(**defaults)


class TestLabelIO:
    def test_parse_example_line(self):
        [label] = parse_label_file(CAR_LINE)
        assert label.type == "Car"
        assert label.truncated == 0.0
        assert label.occluded == 0
        assert label.alpha == -1.57
        assert label.bbox == BBox2D(100.0, 150.0, 200.0, 250.0)
        assert label.dims == (1.5, 1.6, 3.8)
        assert label.location == (2.0, 1.5, 20.0)
        assert label.rotation_y == -1.5
        assert label.score is None

    def test_empty_file(self):
        assert parse_label_file("") == []

    def test_write_matches_devkit_precision(self):
        [label] = parse_label_file(CAR_LINE)
        assert write_label_file([label]) == CAR_LINE

    def test_roundtrip_byte_stable(self):
        rng = np.random.default_rng(12)
        labels = []
        for _ in range(40):
            # values already at 2-decimal precision survive byte-exactly
            vals = np.round(rng.uniform(-50, 50, 13), 2)
            x = np.round(np.sort(rng.uniform(0, 500, 2)), 2)
            y = np.round(np.sort(rng.uniform(0, 300, 2)), 2)
            labels.append(
                KittiLabel(
                    type=str(rng.choice(["Car", "Pedestrian", "Cyclist", "Misc"])),
                    truncated=round(float(rng.uniform(0, 1)), 2),
                    occluded=int(rng.integers(0, 4)),
                    alpha=round(float(rng.uniform(-math.pi, math.pi)), 2),
                    bbox=BBox2D(x[0], y[0], x[1], y[1]),
                    dims=(abs(vals[4]) + 1, abs(vals[5]) + 1, abs(vals[6]) + 1),
                    location=tuple(vals[7:10]),
                    rotation_y=round(float(rng.uniform(-math.pi, math.pi)), 2),
                    score=round(float(rng.uniform(0, 1)), 2),
                )
            )
        text = write_label_file(labels)
        assert write_label_file(parse_label_file(text)) == text
        reparsed = parse_label_file(write_label_file(parse_label_file(text)))
        for a, b in zip(parse_label_file(text), reparsed):
            assert a == b

    def test_sentinel_values_parse(self):
        line = "DontCare -1 -1 -10 559.62 175.83 575.40 183.15 -1 -1 -1 -1000 -1000 -1000 -10\n"
        [label] = parse_label_file(line)
        assert label.type == "DontCare"
        assert label.alpha == -10.0

    def test_wrong_field_count(self):
        with pytest.raises(LabelParseError, match="line 2"):
            parse_label_file(CAR_LINE + "Car 1 2 3\n")

    def test_non_numeric_field(self):
        with pytest.raises(LabelParseError, match="line 1"):
            parse_label_file(CAR_LINE.replace("20.00", "twenty"))


class TestCalib:
    def test_devkit_sample(self):
        calib = parse_calib(SAMPLE_CALIB)
        intr = calib.intrinsics
        assert intr.fx_px == pytest.approx(721.5377)
        assert intr.fy_px == pytest.approx(721.5377)
        assert intr.cx_px == pytest.approx(609.5593)
        assert intr.cy_px == pytest.approx(172.854)

    def test_identity_like(self):
        calib = parse_calib("P2: 1 0 0 0 0 1 0 0 0 0 1 0\n")
        intr = calib.intrinsics
        assert (intr.fx_px, intr.fy_px, intr.cx_px, intr.cy_px) == (1, 1, 0, 0)

    def test_malformed_count(self):
        with pytest.raises(CalibParseError, match="12"):
            parse_calib("P2: 1 0 0 0 0 1 0 0 0 0 1\n")

    def test_missing_p2(self):
        with pytest.raises(CalibParseError, match="no P2"):
            parse_calib("P0: 1 0 0 0 0 1 0 0 0 0 1 0\n")


class TestDepthPng:
    def test_stored_256_is_one_meter(self):
        d = DepthMap(np.array([[1.0]]), np.array([[True]]))
        back = read_depth_png(write_depth_png(d))
        assert back.depth[0, 0] == 1.0

    def test_stored_zero_invalid(self):
        d = DepthMap(np.array([[0.0, 2.0]]), np.array([[False, True]]))
        back = read_depth_png(write_depth_png(d))
        assert not back.valid[0, 0]
        assert back.valid[0, 1]

    def test_quantization_bound(self):
        rng = np.random.default_rng(14)
        depth = rng.uniform(0.01, 255.9, (16, 16))
        d = DepthMap(depth, np.ones_like(depth, dtype=bool))
        back = read_depth_png(write_depth_png(d))
        assert np.abs(back.depth - depth).max() <= 1 / 512

    def test_clamps_at_16_bit(self):
        d = DepthMap(np.array([[300.0]]), np.array([[True]]))
        back = read_depth_png(write_depth_png(d))
        assert back.depth[0, 0] == 65535 / 256.0

    def test_rejects_8_bit(self):
        import io

        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(np.zeros((4, 4), dtype=np.uint8)).save(buf, format="PNG")
        with pytest.raises(DepthPngError, match="16-bit"):
            read_depth_png(buf.getvalue())

    def test_rejects_rgb(self):
        import io

        from PIL import Image

        buf = io.BytesIO()
        Image.new("RGB", (4, 4)).save(buf, format="PNG")
        with pytest.raises(DepthPngError):
            read_depth_png(buf.getvalue())

    def test_rejects_garbage(self):
        with pytest.raises(DepthPngError):
            read_depth_png(b"not a png at all")


class TestVelodyne:
    def test_sixteen_zero_bytes(self):
        points = read_velodyne_bin(bytes(16))
        assert points.shape == (1, 4)
        assert np.all(points == 0.0)

    def test_empty(self):
        assert read_velodyne_bin(b"").shape == (0, 4)

    def test_roundtrip_exact(self):
        rng = np.random.default_rng(15)
        points = rng.standard_normal((100, 4)).astype(np.float32)
        back = read_velodyne_bin(write_velodyne_bin(points))
        assert np.array_equal(back, points)

    def test_bad_length(self):
        with pytest.raises(ValueError, match="divisible by 16"):
            read_velodyne_bin(bytes(15))


class TestEvaluateAp:
    def test_perfect_detections(self):
        gt = [make_label(bbox=(0, 0, 50, 50)), make_label(bbox=(100, 0, 150, 50))]
        dets = [make_label(bbox=(0, 0, 50, 50), score=1.0),
                make_label(bbox=(100, 0, 150, 50), score=1.0)]
        results = evaluate_ap([dets], [gt])
        assert results["Car"].ap == 1.0

    def test_no_detections(self):
        gt = [make_label()]
        results = evaluate_ap([[]], [gt])
        assert results["Car"].ap == 0.0

    def test_hand_case_one_gt_two_dets(self):
        # TP at score .9 then FP at .8: recall hits 1.0 at the first
        # detection, so interpolated precision is 1.0 over the whole grid.
        gt = [make_label(bbox=(0, 0, 50, 50))]
        dets = [
            make_label(bbox=(0, 0, 50, 50), score=0.9),
            make_label(bbox=(200, 200, 260, 260), score=0.8),
        ]
        results = evaluate_ap([dets], [gt], recall_points=40)
        assert results["Car"].ap == 1.0

    def test_hand_case_two_gts_half_recall(self):
        # one TP (recall caps at 0.5), one FP: p_interp = 1 for r <= 0.5,
        # 0 beyond; over the grid {i/40} that is 20 ones -> AP = 0.5
        gt = [make_label(bbox=(0, 0, 50, 50)), make_label(bbox=(100, 100, 150, 150))]
        dets = [
            make_label(bbox=(0, 0, 50, 50), score=0.9),
            make_label(bbox=(300, 300, 350, 350), score=0.8),
        ]
        results = evaluate_ap([dets], [gt], recall_points=40)
        assert results["Car"].ap == pytest.approx(0.5)

    def test_3d_mode(self):
        gt = [make_label()]
        dets = [make_label(score=0.9)]
        results = evaluate_ap([dets], [gt], mode="3d", iou_threshold=0.5)
        assert results["Car"].ap == 1.0

    def test_order_invariance(self):
        rng = np.random.default_rng(16)
        gt, dets = [], []
        for _ in range(10):
            x, y = rng.uniform(0, 200, 2)
            gt.append(make_label(bbox=(x, y, x + 40, y + 40)))
        for lab in gt[:6]:
            b = lab.bbox
            dets.append(make_label(bbox=(b.x1 + 3, b.y1 + 3, b.x2, b.y2),
                                   score=float(rng.uniform(0.2, 1.0))))
        for _ in range(4):
            x, y = rng.uniform(300, 500, 2)
            dets.append(make_label(bbox=(x, y, x + 30, y + 30),
                                   score=float(rng.uniform(0.2, 1.0))))
        base = evaluate_ap([dets], [gt])["Car"].ap
        perm = [dets[i] for i in rng.permutation(len(dets))]
        assert evaluate_ap([perm], [gt])["Car"].ap == base

    def test_adding_tp_never_lowers_ap(self):
        gt = [make_label(bbox=(0, 0, 50, 50)), make_label(bbox=(100, 100, 150, 150))]
        partial = [make_label(bbox=(0, 0, 50, 50), score=0.9)]
        better = partial + [make_label(bbox=(100, 100, 150, 150), score=0.7)]
        ap_partial = evaluate_ap([partial], [gt])["Car"].ap
        ap_better = evaluate_ap([better], [gt])["Car"].ap
        assert ap_better >= ap_partial

    def test_dontcare_suppresses_false_positives(self):
        dc = KittiLabel("DontCare", -1, -1, -10, BBox2D(200, 200, 260, 260),
                        (-1, -1, -1), (-1000, -1000, -1000), -10)
        gt = [make_label(bbox=(0, 0, 50, 50)), dc]
        dets = [
            make_label(bbox=(0, 0, 50, 50), score=0.9),
            make_label(bbox=(205, 205, 255, 255), score=0.8),  # inside DontCare
        ]
        results = evaluate_ap([dets], [gt])
        assert results["Car"].ap == 1.0  # the overlapping det is discarded

    def test_mismatched_image_counts(self):
        with pytest.raises(ValueError):
            evaluate_ap([[]], [[], []])

    def test_precision_array_shape(self):
        gt = [make_label()]
        dets = [make_label(score=0.9)]
        res = evaluate_ap([dets], [gt], recall_points=11)["Car"]
        assert res.recall.shape == (11,)
        assert np.all(np.diff(res.recall) > 0)


class TestDifficulty:
    def test_gates(self):
        easy = make_label(bbox=(0, 0, 50, 50), truncated=0.1, occluded=0)
        hard = make_label(bbox=(0, 0, 50, 30), truncated=0.4, occluded=2)
        assert filter_difficulty([easy, hard], "easy") == [easy]
        assert filter_difficulty([easy, hard], "hard") == [easy, hard]
