"""Rotated-box primitives: corner geometry, exact IoU, NMS, min-area rectangles."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class DegenerateInput(ValueError):
    """Raised when the input geometry has no well-defined enclosing rectangle."""


class BrickClass(enum.Enum):
    BLUE = "blue"
    GREEN = "green"


@dataclass(frozen=True)
class RotatedBox:
    """Rotated rectangle in image coordinates.

    Canonical form: w >= h and theta in [0, pi), with theta measured from the
    image +x axis to the long (w) side. The constructor normalizes any input,
    so two boxes describing the same rectangle compare equal.
    """

    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0
    class_id: BrickClass = BrickClass.BLUE
    score: float = 1.0

    def __post_init__(self):
        w, h, theta = float(self.w), float(self.h), float(self.theta)
        if not (w > 0.0 and h > 0.0):
            raise ValueError(f"box sides must be positive, got w={w}, h={h}")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0,1], got {self.score}")
        if w < h:
            w, h = h, w
            theta += 0.5 * math.pi
        theta = math.fmod(theta, math.pi)
        if theta < 0.0:
            theta += math.pi
        if theta >= math.pi:  # fmod rounding can land exactly on pi
            theta -= math.pi
        object.__setattr__(self, "cx", float(self.cx))
        object.__setattr__(self, "cy", float(self.cy))
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "score", float(self.score))

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_dict(self) -> dict:
        return {
            "cx": self.cx,
            "cy": self.cy,
            "w": self.w,
            "h": self.h,
            "theta": self.theta,
            "class": self.class_id.value,
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RotatedBox":
        return cls(
            cx=d["cx"],
            cy=d["cy"],
            w=d["w"],
            h=d["h"],
            theta=d["theta"],
            class_id=BrickClass(d["class"]),
            score=d.get("score", 1.0),
        )


@dataclass(frozen=True)
class ConvexPolygon:
    """Strictly convex polygon, vertices ordered counter-clockwise."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("polygon needs >= 3 two-dimensional vertices")
        if _signed_area(v) < 0.0:
            v = v[::-1]
        d = v - np.roll(v, 1, axis=0)
        if np.any(np.hypot(d[:, 0], d[:, 1]) < 1e-9):
            raise ValueError("repeated vertices within 1e-9")
        edges = np.roll(v, -1, axis=0) - v
        nxt = np.roll(edges, -1, axis=0)
        cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
        if np.any(cross <= 0.0):
            raise ValueError("vertices are not strictly convex")
        object.__setattr__(self, "vertices", v)

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Boolean mask of points inside or on the boundary of the polygon."""
        return points_in_convex_polygon(np.asarray(points, dtype=float), self.vertices, tol)


@dataclass
class InstanceMask:
    """Per-pixel instance labels (0 = background) with an instance->class map."""

    labels: np.ndarray
    class_of: dict[int, BrickClass] = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise ValueError("labels must be a 2-D array")
        ids = self.instance_ids()
        missing = [i for i in ids if i not in self.class_of]
        if missing:
            raise ValueError(f"instance ids without class entry: {missing}")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def instance_ids(self) -> list[int]:
        ids = np.unique(self.labels)
        return [int(i) for i in ids if i != 0]

    def pixels_of(self, instance_id: int) -> np.ndarray:
        """(N, 2) array of (x, y) pixel coordinates of one instance."""
        rows, cols = np.nonzero(self.labels == instance_id)
        return np.stack([cols, rows], axis=1).astype(float)

    def class_image(self) -> np.ndarray:
        """Per-pixel class index: 0 background, 1 blue, 2 green."""
        out = np.zeros(self.labels.shape, dtype=np.uint8)
        for inst, cls in self.class_of.items():
            out[self.labels == inst] = 1 if cls is BrickClass.BLUE else 2
        return out


def _signed_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def points_in_convex_polygon(points: np.ndarray, vertices: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Membership test against a CCW convex polygon.

    Boundary inclusive: points up to `tol` (a distance) outside an edge
    still count as inside.
    """
    points = np.atleast_2d(points)
    inside = np.ones(len(points), dtype=bool)
    n = len(vertices)
    for i in range(n):
        v0 = vertices[i]
        e = vertices[(i + 1) % n] - v0
        rel = points - v0
        inside &= e[0] * rel[:, 1] - e[1] * rel[:, 0] >= -tol * math.hypot(e[0], e[1])
    return inside


def box_corners(box: RotatedBox) -> ConvexPolygon:
    """Four corners of a rotated box, counter-clockwise."""
    c, s = math.cos(box.theta), math.sin(box.theta)
    hw, hh = 0.5 * box.w, 0.5 * box.h
    local = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
    rot = np.array([[c, -s], [s, c]])
    return ConvexPolygon(local @ rot.T + np.array([box.cx, box.cy]))


def _clip_polygon(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman: clip a polygon by each half-plane of a CCW convex clipper."""
    output = subject
    n = len(clipper)
    for i in range(n):
        if len(output) == 0:
            break
        a = clipper[i]
        b = clipper[(i + 1) % n]
        e = b - a
        rel = output - a
        side = e[0] * rel[:, 1] - e[1] * rel[:, 0]  # >= 0 means inside
        clipped = []
        m = len(output)
        for j in range(m):
            cur, nxt = j, (j + 1) % m
            if side[cur] >= 0.0:
                clipped.append(output[cur])
            if (side[cur] >= 0.0) != (side[nxt] >= 0.0):
                t = side[cur] / (side[cur] - side[nxt])
                clipped.append(output[cur] + t * (output[nxt] - output[cur]))
        output = np.array(clipped) if clipped else np.empty((0, 2))
    return output


def rotated_iou(a: RotatedBox, b: RotatedBox) -> float:
    """Exact intersection-over-union of two rotated boxes via convex clipping."""
    pa = box_corners(a).vertices
    pb = box_corners(b).vertices
    inter_poly = _clip_polygon(pa, pb)
    if len(inter_poly) < 3:
        return 0.0
    inter = abs(_signed_area(inter_poly))
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, inter / union)


def rotated_nms(boxes: list[RotatedBox], iou_threshold: float = 0.5) -> list[RotatedBox]:
    """Greedy non-maximal suppression by descending score.

    A box is dropped when its IoU with an already-kept box exceeds the
    threshold, so no surviving pair overlaps more than ``iou_threshold``.
    """
    if not (0.0 < iou_threshold < 1.0):
        raise ValueError(f"iou_threshold must be in (0,1), got {iou_threshold}")
    order = sorted(range(len(boxes)), key=lambda i: -boxes[i].score)
    kept: list[RotatedBox] = []
    for i in order:
        if all(rotated_iou(boxes[i], k) <= iou_threshold for k in kept):
            kept.append(boxes[i])
    return kept


def min_area_rect(points: np.ndarray, class_id: BrickClass = BrickClass.BLUE, score: float = 1.0) -> RotatedBox:
    """Smallest-area enclosing rectangle of a 2-D point set.

    Rotating calipers over the convex hull: the optimal rectangle has one
    side collinear with a hull edge, so it suffices to test every hull-edge
    direction. Raises DegenerateInput for collinear input.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError("points must have shape (N, 2)")
    hull = convex_hull(points)
    if len(hull) < 3:
        raise DegenerateInput("all points are collinear")
    edges = np.roll(hull, -1, axis=0) - hull
    best = None
    for dx, dy in edges:
        norm = math.hypot(dx, dy)
        ux, uy = dx / norm, dy / norm
        proj_u = hull @ (ux, uy)
        proj_v = hull @ (-uy, ux)
        u0, u1 = proj_u.min(), proj_u.max()
        v0, v1 = proj_v.min(), proj_v.max()
        area = (u1 - u0) * (v1 - v0)
        if best is None or area < best[0]:
            best = (area, ux, uy, u0, u1, v0, v1)
    _, ux, uy, u0, u1, v0, v1 = best
    cu, cv = 0.5 * (u0 + u1), 0.5 * (v0 + v1)
    cx = cu * ux - cv * uy
    cy = cu * uy + cv * ux
    return RotatedBox(cx, cy, u1 - u0, v1 - v0, math.atan2(uy, ux), class_id, score)


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Convex hull by Andrew's monotone chain, CCW, no collinear vertices."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) < 3:
        return pts
    # lexicographic sort on (x, y); np.unique already delivers it
    def half(iterable):
        chain = []
        for p in iterable:
            while len(chain) >= 2:
                a = chain[-1] - chain[-2]
                b = p - chain[-2]
                if a[0] * b[1] - a[1] * b[0] > 0:
                    break
                chain.pop()
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(pts[::-1])
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3 or abs(_signed_area(hull)) < 1e-12:
        return hull[:2] if len(hull) >= 2 else hull
    return hull


def upright_bbox(box: RotatedBox) -> RotatedBox:
    """Tightest axis-aligned box containing the rotated box's corners.

    The result is axis-aligned but returned in canonical form, so a box
    taller than wide carries theta = pi/2 with w/h swapped.
    """
    corners = box_corners(box).vertices
    x0, y0 = corners.min(axis=0)
    x1, y1 = corners.max(axis=0)
    return RotatedBox(0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0, 0.0, box.class_id, box.score)


def is_axis_aligned(box: RotatedBox, tol: float = 1e-9) -> bool:
    r = math.fmod(box.theta, 0.5 * math.pi)
    return min(r, 0.5 * math.pi - r) <= tol
