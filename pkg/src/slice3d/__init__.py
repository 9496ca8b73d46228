"""slice3d: sliced small-object inference and pseudo-LiDAR geometry.

The package groups the deterministic stages of a multi-stage monocular
3D detection pipeline: pinhole/stereo geometry, anti-aliased
downsampling, slicing-aided inference over a pluggable 2D detector,
anchor-based proposal geometry, depth-map back-projection with 3D box
fitting, and KITTI-format I/O plus AP evaluation.
"""

from .geometry import (
    BBox2D,
    BBox3D,
    CameraIntrinsics,
    Detection,
    Point3,
    StereoRig,
    backproject_pixel,
    box3d_corners,
    depth_to_disparity,
    disparity_to_depth,
    iou_2d,
    iou_3d,
    project_point,
)
from .antialias import (
    BlurKernel,
    binomial_kernel,
    blur_downsample,
    max_blur_pool,
    naive_pool,
    shift_consistency,
)
from .sahi import (
    BackendError,
    BlobDetector,
    ExternalDetector,
    MergeConfig,
    SliceConfig,
    SliceRegion,
    compute_slices,
    nms_merge,
    remap_detections,
    sahi_infer,
    slice_dataset,
)
from .anchors import (
    Anchor,
    AnchorSpec,
    RegressionDeltas,
    decode_deltas,
    encode_deltas,
    generate_anchors,
    match_anchors,
)
from .pseudolidar import (
    DepthMap,
    FrontViewEncoding,
    PseudoCloud,
    depth_to_cloud,
    fit_pseudo_label,
    front_view_encode,
    frustum_points,
    roi_mean_pool,
)
from .kitti import (
    EvalResult,
    KittiCalib,
    KittiLabel,
    evaluate_ap,
    parse_calib,
    parse_label_file,
    read_depth_png,
    read_velodyne_bin,
    write_depth_png,
    write_label_file,
    write_velodyne_bin,
)

__version__ = "0.1.0"
