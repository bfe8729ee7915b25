"""End-to-end brick pose estimation from a registered cloud and one rotated box.

Stages: crop the brick cloud, fit the dominant plane, take its surface
pose, extract boundary points, fit boundary lines, intersect them into
corners, pair corners into measured edges, identify the face from the edge
lengths, and assemble the 6-DOF brick pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import cloud as pc
from .geom import RotatedBox
from .pose import BrickDims, BrickPose, FaceType, brick_pose_from_surface, identify_surface
from .synth import crop_brick_cloud


class StageError(RuntimeError):
    """Wraps a pipeline stage failure with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    plane: pc.RansacParams = pc.DEFAULT_PLANE_PARAMS
    line: pc.RansacParams = pc.DEFAULT_LINE_PARAMS
    boundary_k: int = 10
    boundary_gap: float = 0.5 * math.pi
    corner_max_gap: float = 0.02
    face_tol: float = 0.01
    max_lines: int = 8


@dataclass
class PipelineResult:
    brick_cloud: pc.PointCloud
    plane: pc.PlaneModel
    surface: pc.SurfacePose
    boundary: np.ndarray
    lines: list[pc.Line3]
    corners: list[pc.Corner]
    edges: list[tuple[int, int, float]]
    face: FaceType
    pose: BrickPose

    @property
    def edge_lengths(self) -> list[float]:
        return [e[2] for e in self.edges]


def estimate_brick_pose(
    cloud: pc.PointCloud,
    box: RotatedBox,
    dims: BrickDims,
    config: PipelineConfig = PipelineConfig(),
) -> PipelineResult:
    """Run the full pipeline; any stage failure raises StageError naming the stage."""

    def stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as exc:
            raise StageError(name, exc) from exc

    brick_cloud = stage("crop", crop_brick_cloud, cloud, box)
    plane = stage("plane", pc.ransac_plane, brick_cloud, config.plane)
    surface = stage("surface", pc.surface_pose, brick_cloud, plane)
    boundary = stage(
        "boundary", pc.boundary_points, brick_cloud, plane, config.boundary_k, config.boundary_gap
    )
    lines = stage(
        "lines", pc.ransac_lines, brick_cloud, boundary, plane, config.line, config.max_lines
    )
    lines = _offset_lines_half_pixel(brick_cloud, lines, plane, surface.centroid)
    corners = stage("corners", pc.corner_points, brick_cloud, lines, plane, config.corner_max_gap)
    edges = stage("edges", pc.pair_corners_to_edges, corners, lines)
    face = stage("identify", identify_surface, [e[2] for e in edges], dims, config.face_tol)
    surface = _recenter_on_corners(surface, corners)
    pose = stage("pose", brick_pose_from_surface, surface, face, dims)
    return PipelineResult(brick_cloud, plane, surface, boundary, lines, corners, edges, face, pose)


def _offset_lines_half_pixel(
    cloud: pc.PointCloud,
    lines: list[pc.Line3],
    plane: pc.PlaneModel,
    interior: np.ndarray,
) -> list[pc.Line3]:
    """Push each boundary line half a pixel outward.

    Boundary points are centers of the outermost rendered pixels, so a
    fitted line sits on average half a pixel inside the true silhouette
    edge, by a metric amount that grows with depth and obliquity. The local
    pixel-to-metric scale is estimated from the registered cloud itself
    (neighboring pixels of each line inlier), making the correction
    camera-agnostic.
    """
    if not cloud.registered:
        return lines
    index_of = {(int(u), int(v)): i for i, (u, v) in enumerate(cloud.pixels)}
    pts = cloud.points
    adjusted = []
    for line in lines:
        outward = np.cross(plane.normal, line.direction)
        if np.dot(line.anchor - interior, outward) < 0.0:
            outward = -outward
        scales = []
        continuous = 0
        samples = 0
        for idx in line.inlier_indices:
            u, v = int(cloud.pixels[idx][0]), int(cloud.pixels[idx][1])
            p = pts[idx]
            ju = _pixel_step(index_of, pts, plane, p, (u + 1, v), (u - 1, v))
            jv = _pixel_step(index_of, pts, plane, p, (u, v + 1), (u, v - 1))
            if ju is None or jv is None:
                continue
            coef, *_ = np.linalg.lstsq(np.column_stack([ju, jv]), outward, rcond=None)
            step = float(np.hypot(coef[0], coef[1]))  # pixels per meter along `outward`
            if step <= 1e-9:
                continue
            scales.append(1.0 / step)
            samples += 1
            du = int(round(coef[0] / step))
            dv = int(round(coef[1] / step))
            j = index_of.get((u + du, v + dv))
            if j is not None and np.linalg.norm(pts[j] - p) < 3.0 / step:
                continuous += 1
        # a dihedral edge (the surface continues onto an adjacent face) has no
        # raster inset: the inlier support already ends at the true edge
        if scales and continuous < 0.3 * samples:
            anchor = line.anchor + 0.5 * float(np.median(scales)) * outward
            adjusted.append(pc.Line3(anchor, line.direction, line.inlier_indices))
        else:
            adjusted.append(line)
    return adjusted


def _pixel_step(index_of, pts, plane, origin, forward, backward, max_off_plane: float = 0.01):
    """3-D displacement per +1 pixel step, taken from the most on-plane neighbor.

    At a silhouette edge one neighbor is missing or jumps to another
    surface; the interior-side neighbor stays on the face plane and is
    preferred.
    """
    best = None
    for key, sign in ((forward, 1.0), (backward, -1.0)):
        j = index_of.get(key)
        if j is None:
            continue
        off = float(plane.distances(pts[j][None, :])[0])
        if off > max_off_plane:
            continue
        if best is None or off < best[0]:
            best = (off, sign * (pts[j] - origin))
    return None if best is None else best[1]


def _recenter_on_corners(surface: pc.SurfacePose, corners: list[pc.Corner]) -> pc.SurfacePose:
    """Replace the inlier-mean centroid with the corner-derived face center.

    The inlier mean is biased on oblique faces (pixel sampling density falls
    with depth), while corner geometry is not: for a full set of 4 corners
    the center is their mean, for 3 it is the diagonal midpoint. Fewer
    corners leave no better estimate than the inlier mean.
    """
    if len(corners) == 4:
        center = np.mean([c.point for c in corners], axis=0)
    elif len(corners) == 3:
        pts = [c.point for c in corners]
        pairs = [(0, 1), (0, 2), (1, 2)]
        a, b = max(pairs, key=lambda p: np.linalg.norm(pts[p[0]] - pts[p[1]]))
        center = 0.5 * (pts[a] + pts[b])
    else:
        return surface
    return pc.SurfacePose(center, surface.major, surface.minor, surface.normal)
