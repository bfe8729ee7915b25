"""Rotated-box brick perception toolkit.

Detection-side primitives (rotated boxes, grid-cell target codec, pixel
precision / recall / mAP metrics) and a point-cloud pose pipeline that
recovers full 6-DOF cuboid poses from one visible face, verified against a
synthetic depth-scene generator with exact ground truth.
"""

from .geom import (
    BrickClass,
    ConvexPolygon,
    DegenerateInput,
    InstanceMask,
    RotatedBox,
    box_corners,
    min_area_rect,
    rotated_iou,
    rotated_nms,
    upright_bbox,
)
from .codec import EncodingConfig, GridTensor, decode, encode, encode_mask, read_tensor, write_tensor
from .cloud import (
    Line3,
    PlaneModel,
    PointCloud,
    RansacParams,
    SurfacePose,
    boundary_points,
    corner_points,
    pair_corners_to_edges,
    ransac_lines,
    ransac_plane,
    read_ply,
    surface_pose,
    write_ply,
)
from .metrics import (
    EvalReport,
    compare_rotated_vs_upright,
    detection_recall,
    evaluate,
    map_score,
    pixel_precision,
)
from .pose import (
    BrickDims,
    BrickPose,
    FaceId,
    FaceType,
    NoiseModel,
    PlacementCriteria,
    brick_pose_from_surface,
    identify_surface,
    placement_check,
    pose_error,
    select_topmost,
    simulate_wall,
)
from .synth import (
    CameraModel,
    RenderResult,
    SceneBrick,
    SceneSpec,
    crop_brick_cloud,
    random_clutter_spec,
    random_single_brick_spec,
    render_scene,
)
from .pipeline import PipelineConfig, PipelineResult, StageError, estimate_brick_pose

__version__ = "0.1.0"
