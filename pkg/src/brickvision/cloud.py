"""Point-cloud geometry for planar-face pose estimation.

The stages mirror a depth-sensor bin-picking pipeline: fit the dominant
plane in a cropped brick cloud, describe the planar patch by centroid and
principal axes, extract its boundary points, fit boundary lines, intersect
them into corners, and pair corners into measured edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


class InsufficientInliers(RuntimeError):
    """RANSAC could not find a model supported by enough points."""


class DegenerateScatter(RuntimeError):
    """The in-plane scatter has no stable major axis (eigenvalues within 1%)."""


class TooSparse(RuntimeError):
    """Not enough neighbors for the boundary angular-gap criterion."""


class PlyParseError(ValueError):
    pass


@dataclass(frozen=True)
class RansacParams:
    iterations: int = 500
    threshold: float = 0.005  # meters, Kinect-class noise at ~1 m
    min_inliers: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.threshold <= 0.0:
            raise ValueError("threshold must be positive")


DEFAULT_PLANE_PARAMS = RansacParams()
DEFAULT_LINE_PARAMS = RansacParams(min_inliers=10)


@dataclass
class PointCloud:
    """3-D points in the camera frame, optionally registered to image pixels."""

    points: np.ndarray
    pixels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")
        if self.pixels is not None:
            self.pixels = np.asarray(self.pixels).reshape(-1, 2)
            if len(self.pixels) != len(self.points):
                raise ValueError("pixel registration must match point count")
            if len(np.unique(self.pixels, axis=0)) != len(self.pixels):
                raise ValueError("registered clouds need unique (u, v) per point")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def registered(self) -> bool:
        return self.pixels is not None

    def select(self, indices) -> "PointCloud":
        pix = self.pixels[indices] if self.registered else None
        return PointCloud(self.points[indices], pix)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "PointCloud":
        pts = self.points @ np.asarray(rotation).T + np.asarray(translation)
        return PointCloud(pts, None if self.pixels is None else self.pixels.copy())


@dataclass
class PlaneModel:
    """Plane n . p + d = 0 with |n| = 1, normal oriented toward the camera."""

    normal: np.ndarray
    offset: float
    inlier_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    def __post_init__(self):
        self.normal = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(self.normal)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")
        self.inlier_indices = np.asarray(self.inlier_indices, dtype=int)

    def distances(self, points: np.ndarray) -> np.ndarray:
        return np.abs(points @ self.normal + self.offset)

    def project(self, points: np.ndarray) -> np.ndarray:
        signed = points @ self.normal + self.offset
        return points - np.outer(signed, self.normal)


@dataclass
class SurfacePose:
    """Centroid plus right-handed orthonormal (major, minor, normal) axes."""

    centroid: np.ndarray
    major: np.ndarray
    minor: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        self.centroid = np.asarray(self.centroid, dtype=np.float64).reshape(3)
        self.major = np.asarray(self.major, dtype=np.float64).reshape(3)
        self.minor = np.asarray(self.minor, dtype=np.float64).reshape(3)
        self.normal = np.asarray(self.normal, dtype=np.float64).reshape(3)

    def rotation(self) -> np.ndarray:
        """Columns (major, minor, normal)."""
        return np.column_stack([self.major, self.minor, self.normal])

    def is_right_handed(self, tol: float = 1e-9) -> bool:
        r = self.rotation()
        return bool(
            np.allclose(r.T @ r, np.eye(3), atol=1e-6) and np.linalg.det(r) > 1.0 - 1e-6
        )


@dataclass
class Line3:
    """3-D line through `anchor` with unit in-plane `direction`."""

    anchor: np.ndarray
    direction: np.ndarray
    inlier_indices: np.ndarray

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=np.float64).reshape(3)
        self.direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        self.inlier_indices = np.asarray(self.inlier_indices, dtype=int)

    def distances(self, points: np.ndarray) -> np.ndarray:
        rel = points - self.anchor
        along = rel @ self.direction
        perp = rel - np.outer(along, self.direction)
        return np.linalg.norm(perp, axis=1)


@dataclass(frozen=True)
class Corner:
    """Line-pair intersection; `line_pair` indexes the generating lines."""

    point: np.ndarray
    line_pair: tuple[int, int]


def _sample_index_tuples(rng: np.random.Generator, n: int, k: int, count: int) -> np.ndarray:
    """(count, k) integer samples without replacement within each row."""
    samples = rng.integers(0, n, size=(count, k))
    for _ in range(100):
        bad = np.zeros(count, dtype=bool)
        for a in range(k):
            for b in range(a + 1, k):
                bad |= samples[:, a] == samples[:, b]
        if not bad.any():
            break
        samples[bad] = rng.integers(0, n, size=(int(bad.sum()), k))
    return samples


def ransac_plane(cloud: PointCloud, params: RansacParams = DEFAULT_PLANE_PARAMS) -> PlaneModel:
    """Best-supported plane over random point triples, least-squares refit.

    The returned normal points toward the camera (origin), i.e. away from
    the inlier centroid.
    """
    pts = cloud.points
    n_pts = len(pts)
    if n_pts < 3:
        raise InsufficientInliers(f"need >= 3 points, got {n_pts}")
    rng = np.random.default_rng(params.seed)
    triples = _sample_index_tuples(rng, n_pts, 3, params.iterations)
    p0 = pts[triples[:, 0]]
    normals = np.cross(pts[triples[:, 1]] - p0, pts[triples[:, 2]] - p0)
    norms = np.linalg.norm(normals, axis=1)
    ok = norms > 1e-12
    normals[ok] /= norms[ok, None]
    offsets = -np.einsum("ij,ij->i", normals, p0)

    best_count, best_iter = -1, -1
    block = max(1, int(2e7 // max(n_pts, 1)))
    for start in range(0, params.iterations, block):
        sl = slice(start, min(start + block, params.iterations))
        dist = np.abs(pts @ normals[sl].T + offsets[sl])
        counts = (dist <= params.threshold).sum(axis=0)
        counts[~ok[sl]] = -1
        i = int(np.argmax(counts))
        if counts[i] > best_count:
            best_count, best_iter = int(counts[i]), start + i
    if best_count < max(params.min_inliers, 3):
        raise InsufficientInliers(f"best plane supported by {best_count} points")

    inliers = np.abs(pts @ normals[best_iter] + offsets[best_iter]) <= params.threshold
    normal, offset = _fit_plane_lsq(pts[inliers])
    inlier_idx = np.nonzero(np.abs(pts @ normal + offset) <= params.threshold)[0]
    centroid = pts[inlier_idx].mean(axis=0)
    if np.dot(normal, -centroid) < 0.0:
        normal, offset = -normal, -offset
    return PlaneModel(normal, offset, inlier_idx)


def _fit_plane_lsq(points: np.ndarray) -> tuple[np.ndarray, float]:
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    normal = vt[-1]
    normal = normal / np.linalg.norm(normal)
    return normal, float(-np.dot(normal, centroid))


def surface_pose(cloud: PointCloud, plane: PlaneModel) -> SurfacePose:
    """Centroid and principal in-plane axes of the plane inliers.

    Axis signs are fixed deterministically: the major axis is flipped so its
    first nonzero camera-frame component is positive, and the minor axis
    completes a right-handed frame with the plane normal.
    """
    pts = cloud.points[plane.inlier_indices]
    if len(pts) < 3:
        raise ValueError("surface pose needs >= 3 inliers")
    centroid = pts.mean(axis=0)
    n = plane.normal
    centered = pts - centroid
    in_plane = centered - np.outer(centered @ n, n)
    cov = in_plane.T @ in_plane / len(pts)
    eigvals, eigvecs = np.linalg.eigh(cov)
    lam1, lam2 = float(eigvals[2]), float(eigvals[1])
    if lam1 <= 0.0 or (lam1 - lam2) < 0.01 * lam1:
        raise DegenerateScatter(
            f"principal in-plane eigenvalues {lam1:.3e}, {lam2:.3e} are within 1%"
        )
    major = eigvecs[:, 2]
    major = major - np.dot(major, n) * n
    major /= np.linalg.norm(major)
    for comp in major:
        if abs(comp) > 1e-12:
            if comp < 0.0:
                major = -major
            break
    minor = np.cross(n, major)
    return SurfacePose(centroid, major, minor, n)


def boundary_points(
    cloud: PointCloud, plane: PlaneModel, k: int = 10, gap: float = 0.5 * math.pi
) -> np.ndarray:
    """Indices of plane inliers on the patch boundary.

    A point is boundary when, among the directions to its k nearest
    neighbors in the plane projection, the largest angular gap exceeds
    `gap`: interior points see neighbors all around, boundary points have
    an empty sector.
    """
    if k < 4:
        raise ValueError("k must be >= 4")
    idx = plane.inlier_indices
    pts = cloud.points[idx]
    if len(pts) <= k:
        raise TooSparse(f"{len(pts)} inliers cannot provide {k} neighbors each")
    u, v = _plane_basis(plane.normal)
    flat = np.column_stack([pts @ u, pts @ v])
    tree = cKDTree(flat)
    _, nbr = tree.query(flat, k=k + 1)
    rel = flat[nbr[:, 1:]] - flat[:, None, :]
    angles = np.sort(np.arctan2(rel[:, :, 1], rel[:, :, 0]), axis=1)
    gaps = np.diff(angles, axis=1)
    wrap = angles[:, 0] + 2.0 * math.pi - angles[:, -1]
    max_gap = np.maximum(gaps.max(axis=1), wrap)
    return idx[max_gap > gap]


def _plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.zeros(3)
    a[int(np.argmin(np.abs(normal)))] = 1.0
    u = a - np.dot(a, normal) * normal
    u /= np.linalg.norm(u)
    return u, np.cross(normal, u)


def ransac_lines(
    cloud: PointCloud,
    boundary: np.ndarray,
    plane: PlaneModel,
    params: RansacParams = DEFAULT_LINE_PARAMS,
    max_lines: int = 8,
) -> list[Line3]:
    """Sequential RANSAC line extraction on boundary points.

    Fits the best-supported line, removes its inliers, and repeats until
    fewer than `min_inliers` points remain, no line reaches `min_inliers`,
    or `max_lines` lines were found. A candidate nearly parallel and nearly
    coincident with an already-kept line (a second raster row of the same
    physical edge) is absorbed: its points are removed but no new line is
    emitted.
    """
    remaining = np.asarray(boundary, dtype=int)
    lines: list[Line3] = []
    rng = np.random.default_rng(params.seed)
    n = plane.normal
    while len(remaining) >= params.min_inliers and len(lines) < max_lines:
        pts = cloud.points[remaining]
        pairs = _sample_index_tuples(rng, len(pts), 2, params.iterations)
        anchors = pts[pairs[:, 0]]
        dirs = pts[pairs[:, 1]] - anchors
        dirs -= np.outer(dirs @ n, n)  # keep directions in-plane
        norms = np.linalg.norm(dirs, axis=1)
        ok = norms > 1e-12
        dirs[ok] /= norms[ok, None]

        rel = pts[None, :, :] - anchors[:, None, :]
        along = np.einsum("spk,sk->sp", rel, dirs)
        perp = rel - along[:, :, None] * dirs[:, None, :]
        dist = np.linalg.norm(perp, axis=2)
        counts = (dist <= params.threshold).sum(axis=1)
        counts[~ok] = -1
        best = int(np.argmax(counts))
        if counts[best] < params.min_inliers:
            break

        mask = dist[best] <= params.threshold
        # iterate fit <-> inlier selection; straightens staircase-sampled edges
        for _ in range(3):
            anchor, direction = _fit_line_lsq(pts[mask], n)
            refined = _line_distances(pts, anchor, direction) <= params.threshold
            if refined.sum() < params.min_inliers or np.array_equal(refined, mask):
                break
            mask = refined
        anchor, direction = _fit_line_lsq(pts[mask], n)
        if not _near_existing_line(anchor, direction, lines, 3.0 * params.threshold):
            lines.append(Line3(anchor, direction, remaining[mask]))
        remaining = remaining[~mask]
    return lines


def _near_existing_line(
    anchor: np.ndarray, direction: np.ndarray, lines: list[Line3], lateral_tol: float
) -> bool:
    for line in lines:
        if abs(float(np.dot(direction, line.direction))) < 0.996:  # > ~5 deg apart
            continue
        rel = anchor - line.anchor
        lateral = rel - np.dot(rel, line.direction) * line.direction
        if np.linalg.norm(lateral) < lateral_tol:
            return True
    return False


def _line_distances(points: np.ndarray, anchor: np.ndarray, direction: np.ndarray) -> np.ndarray:
    rel = points - anchor
    along = rel @ direction
    return np.linalg.norm(rel - np.outer(along, direction), axis=1)


def _fit_line_lsq(points: np.ndarray, plane_normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    anchor = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - anchor, full_matrices=False)
    direction = vt[0]
    direction = direction - np.dot(direction, plane_normal) * plane_normal
    direction /= np.linalg.norm(direction)
    for comp in direction:
        if abs(comp) > 1e-12:
            if comp < 0.0:
                direction = -direction
            break
    return anchor, direction


def corner_points(
    cloud: PointCloud,
    lines: list[Line3],
    plane: PlaneModel,
    max_gap: float = 0.02,
) -> list[Corner]:
    """In-plane intersections of non-parallel line pairs.

    A pseudo-intersection far from the data is rejected: the corner must
    lie within `max_gap` of the nearest inlier of both generating lines.
    """
    corners: list[Corner] = []
    for i in range(len(lines)):
        for j in range(i + 1, len(lines)):
            di, dj = lines[i].direction, lines[j].direction
            if np.linalg.norm(np.cross(di, dj)) < 1e-6:
                continue
            p = _intersect_lines(lines[i], lines[j])
            p = p - (np.dot(plane.normal, p) + plane.offset) * plane.normal
            near_i = np.min(np.linalg.norm(cloud.points[lines[i].inlier_indices] - p, axis=1))
            near_j = np.min(np.linalg.norm(cloud.points[lines[j].inlier_indices] - p, axis=1))
            if near_i <= max_gap and near_j <= max_gap:
                corners.append(Corner(p, (i, j)))
    return corners


def _intersect_lines(a: Line3, b: Line3) -> np.ndarray:
    # least-squares closest point of two (near-)coplanar lines
    da, db = a.direction, b.direction
    r = b.anchor - a.anchor
    dot = np.dot(da, db)
    denom = 1.0 - dot * dot
    ta = (np.dot(r, da) - dot * np.dot(r, db)) / denom
    tb = (dot * np.dot(r, da) - np.dot(r, db)) / denom
    pa = a.anchor + ta * da
    pb = b.anchor + tb * db
    return 0.5 * (pa + pb)


def pair_corners_to_edges(
    corners: list[Corner], lines: list[Line3]
) -> list[tuple[int, int, float]]:
    """(corner_i, corner_j, length) for corners sharing a generating line.

    Each line contributes at most one edge: the pair of its corners with
    the smallest separation.
    """
    by_line: dict[int, list[int]] = {}
    for ci, corner in enumerate(corners):
        for li in corner.line_pair:
            by_line.setdefault(li, []).append(ci)
    edges: list[tuple[int, int, float]] = []
    for li in sorted(by_line):
        members = by_line[li]
        if len(members) < 2:
            continue
        best = None
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                ca, cb = members[a], members[b]
                d = float(np.linalg.norm(corners[ca].point - corners[cb].point))
                if best is None or d < best[2]:
                    best = (ca, cb, d)
        edges.append(best)
    return edges


def write_ply(cloud: PointCloud, path) -> None:
    """ASCII PLY with float32-precision x y z and optional uint16 u v."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if cloud.registered:
        lines += ["property ushort u", "property ushort v"]
    lines.append("end_header")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
        if cloud.registered:
            for (x, y, z), (u, v) in zip(cloud.points, cloud.pixels):
                f.write(f"{x:.9g} {y:.9g} {z:.9g} {int(u)} {int(v)}\n")
        else:
            for x, y, z in cloud.points:
                f.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_ply(path) -> PointCloud:
    with open(path) as f:
        if f.readline().strip() != "ply":
            raise PlyParseError("missing ply magic line")
        n_vertices = None
        properties: list[str] = []
        for line in f:
            line = line.strip()
            if line == "end_header":
                break
            parts = line.split()
            if parts[:2] == ["format", "ascii"]:
                continue
            if parts[0] == "comment":
                continue
            if parts[0] == "format":
                raise PlyParseError(f"unsupported format {parts[1]}")
            if parts[0] == "element":
                if parts[1] != "vertex":
                    raise PlyParseError(f"unsupported element {parts[1]}")
                n_vertices = int(parts[2])
            elif parts[0] == "property":
                properties.append(parts[2])
        else:
            raise PlyParseError("missing end_header")
        if n_vertices is None:
            raise PlyParseError("missing vertex element")
        if properties[:3] != ["x", "y", "z"]:
            raise PlyParseError(f"expected x y z leading properties, got {properties}")
        registered = properties[3:5] == ["u", "v"]
        rows = np.loadtxt(f, dtype=np.float64, max_rows=n_vertices, ndmin=2)
    if rows.shape[0] != n_vertices:
        raise PlyParseError(f"expected {n_vertices} vertices, read {rows.shape[0]}")
    if registered:
        return PointCloud(rows[:, :3], rows[:, 3:5].astype(np.uint16))
    return PointCloud(rows[:, :3])
