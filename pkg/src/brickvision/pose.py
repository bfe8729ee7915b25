"""Brick pose from an observed face.

A cuboid's face is identified by its measured edge lengths, and the fixed
transform between that face's frame and the brick's centroidal frame turns
a planar surface pose into the full 6-DOF brick pose. Also provides the
pick-side topmost selection, the placement success check, and a wall-building
simulation that chains placement errors layer by layer.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .cloud import SurfacePose


class NoMatchingFace(RuntimeError):
    """No face's edge pair matches the measured lengths within tolerance."""


class AmbiguousFace(RuntimeError):
    """More than one face matches the measured lengths within tolerance."""


class InvalidFrame(ValueError):
    """Surface axes are not a right-handed orthonormal frame."""


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class BrickDims:
    """Brick dimensions in meters, ordered L >= W >= H > 0."""

    L: float
    W: float
    H: float

    def __post_init__(self):
        if not (self.L >= self.W >= self.H > 0.0):
            raise ValueError(f"expected L >= W >= H > 0, got {self.L}, {self.W}, {self.H}")

    @property
    def ambiguous(self) -> bool:
        """True when consecutive dims are within 5%, making surface ID shaky."""
        return self.L / self.W <= 1.05 or self.W / self.H <= 1.05

    def as_array(self) -> np.ndarray:
        return np.array([self.L, self.W, self.H])


# configuration default only; all tests parameterize dims explicitly
DEFAULT_DIMS = BrickDims(0.20, 0.09, 0.06)


class FaceType(enum.Enum):
    LW = "LW"
    LH = "LH"
    WH = "WH"

    def edge_pair(self, dims: BrickDims) -> tuple[float, float]:
        """(long, short) edge lengths of this face."""
        return {
            FaceType.LW: (dims.L, dims.W),
            FaceType.LH: (dims.L, dims.H),
            FaceType.WH: (dims.W, dims.H),
        }[self]

    def thickness(self, dims: BrickDims) -> float:
        """The dim orthogonal to this face."""
        return {FaceType.LW: dims.H, FaceType.LH: dims.W, FaceType.WH: dims.L}[self]


@dataclass(frozen=True)
class FaceId:
    """A face type plus which of the two parallel faces (+/- side)."""

    face: FaceType
    positive_side: bool = True

    @property
    def label(self) -> str:
        return self.face.value + ("+" if self.positive_side else "-")


@dataclass
class BrickPose:
    """Rigid camera<-brick transform: p_cam = rotation @ p_brick + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        r = self.rotation
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6) or np.linalg.det(r) < 0.0:
            raise ValueError("rotation must be orthonormal with det +1")

    def transform_points(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def to_dict(self, face: FaceType | None = None) -> dict:
        d = {"R": self.rotation.tolist(), "t": self.translation.tolist()}
        if face is not None:
            d["face"] = face.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BrickPose":
        return cls(np.array(d["R"]), np.array(d["t"]))


@dataclass(frozen=True)
class PlacementCriteria:
    max_centroid_dist: float = 0.1  # meters, ground-plane projection
    max_euler_deg: float = 15.0  # per axis

    def __post_init__(self):
        if self.max_centroid_dist <= 0.0 or self.max_euler_deg <= 0.0:
            raise ValueError("placement criteria must be positive")


@dataclass
class PlacementResult:
    success: bool
    centroid_err: float
    euler_err_deg: np.ndarray

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "centroid_err": self.centroid_err,
            "euler_err_deg": [float(e) for e in self.euler_err_deg],
        }


def identify_surface(edge_lengths, dims: BrickDims, tol: float = 0.01) -> FaceType:
    """Match measured edge lengths against the brick's three face types.

    Lengths are clustered into at most two groups (split at the largest
    gap); the group medians, as an unordered pair or a single value, are
    compared against each face's (long, short) edge pair within `tol`.
    """
    lengths = sorted(float(x) for x in edge_lengths)
    if not lengths:
        raise ValueError("need at least one edge length")
    if lengths[-1] - lengths[0] <= tol:
        medians = [float(np.median(lengths))]
    else:
        gaps = np.diff(lengths)
        split = int(np.argmax(gaps)) + 1
        medians = sorted(
            [float(np.median(lengths[:split])), float(np.median(lengths[split:]))],
            reverse=True,
        )

    matches = []
    for face in FaceType:
        long_edge, short_edge = face.edge_pair(dims)
        if len(medians) == 2:
            hit = abs(medians[0] - long_edge) <= tol and abs(medians[1] - short_edge) <= tol
        else:
            hit = min(abs(medians[0] - long_edge), abs(medians[0] - short_edge)) <= tol
        if hit:
            matches.append(face)
    if not matches:
        raise NoMatchingFace(f"edge groups {medians} match no face of {dims} within {tol}")
    if len(matches) > 1:
        raise AmbiguousFace(f"edge groups {medians} match {[m.value for m in matches]}")
    return matches[0]


def brick_pose_from_surface(sp: SurfacePose, face: FaceType, dims: BrickDims) -> BrickPose:
    """Full brick pose from one observed face.

    Brick axes are x along L, y along W, z along H. The identified face is
    taken to be the camera-side one: its outward normal maps to the surface
    normal and its long edge to the surface major axis. The centroid sits
    half the face-orthogonal dim behind the surface.
    """
    if not sp.is_right_handed():
        raise InvalidFrame("surface axes must be right-handed orthonormal")
    e1, e2, e3 = sp.major, sp.minor, sp.normal
    if face is FaceType.LW:
        rotation = np.column_stack([e1, e2, e3])
    elif face is FaceType.LH:
        rotation = np.column_stack([e1, e3, -e2])
    else:  # WH
        rotation = np.column_stack([e3, e1, e2])
    translation = sp.centroid - 0.5 * face.thickness(dims) * e3
    return BrickPose(rotation, translation)


def select_topmost(poses: list[BrickPose], up: np.ndarray) -> int:
    """Index of the pose with the greatest height along `up`; ties keep the
    earliest index."""
    if not poses:
        raise EmptyInput("no poses to select from")
    up = np.asarray(up, dtype=float)
    heights = [float(np.dot(p.translation, up)) for p in poses]
    return int(np.argmax(heights))


def placement_check(
    pose: BrickPose,
    reference: BrickPose,
    criteria: PlacementCriteria = PlacementCriteria(),
    ground_normal: np.ndarray = (0.0, 0.0, 1.0),
) -> PlacementResult:
    """Placement success versus a reference brick.

    Success needs the centroid offset projected on the ground plane below
    `max_centroid_dist` and every intrinsic-XYZ Euler angle of the relative
    rotation below `max_euler_deg`.
    """
    n = np.asarray(ground_normal, dtype=float)
    n = n / np.linalg.norm(n)
    delta = pose.translation - reference.translation
    horizontal = delta - np.dot(delta, n) * n
    centroid_err = float(np.linalg.norm(horizontal))
    rel = reference.rotation.T @ pose.rotation
    euler = np.abs(Rotation.from_matrix(rel).as_euler("XYZ", degrees=True))
    success = centroid_err < criteria.max_centroid_dist and bool(
        np.all(euler < criteria.max_euler_deg)
    )
    return PlacementResult(success, centroid_err, euler)


# proper rotation symmetries of a generic cuboid: identity plus the 180-degree
# turns about each brick axis; a single face observation cannot distinguish them
CUBOID_SYMMETRIES = [
    np.diag([1.0, 1.0, 1.0]),
    np.diag([1.0, -1.0, -1.0]),
    np.diag([-1.0, 1.0, -1.0]),
    np.diag([-1.0, -1.0, 1.0]),
]


def pose_error(pose: BrickPose, reference: BrickPose) -> tuple[float, np.ndarray]:
    """(centroid error m, per-axis Euler error deg) modulo cuboid symmetry.

    The rotation error is minimized over the cuboid's four proper
    symmetries, since a face observation cannot distinguish them.
    """
    centroid_err = float(np.linalg.norm(pose.translation - reference.translation))
    best = None
    for sym in CUBOID_SYMMETRIES:
        rel = (reference.rotation @ sym).T @ pose.rotation
        euler = np.abs(Rotation.from_matrix(rel).as_euler("XYZ", degrees=True))
        if best is None or euler.max() < best.max():
            best = euler
    return centroid_err, best


@dataclass(frozen=True)
class NoiseModel:
    """Per-placement perturbation: zero-mean Gaussian translation (m) and
    per-axis Euler rotation (deg)."""

    sigma_translation: float = 0.0
    sigma_rotation_deg: float = 0.0

    def perturb(self, pose: BrickPose, rng: np.random.Generator) -> BrickPose:
        dt = rng.normal(0.0, self.sigma_translation, 3) if self.sigma_translation > 0 else np.zeros(3)
        if self.sigma_rotation_deg > 0:
            angles = rng.normal(0.0, self.sigma_rotation_deg, 3)
            dr = Rotation.from_euler("XYZ", angles, degrees=True).as_matrix()
        else:
            dr = np.eye(3)
        return BrickPose(pose.rotation @ dr, pose.translation + dt)


def simulate_wall(
    dims: BrickDims,
    noise: NoiseModel,
    rounds: int = 25,
    layers: int = 6,
    seed: int = 0,
    criteria: PlacementCriteria = PlacementCriteria(),
    up: np.ndarray = (0.0, 0.0, 1.0),
) -> list[int]:
    """Counts of rounds that stayed successful through layers 2..`layers`.

    Layer 1 is placed exactly (the manual reference). Each later layer is
    stacked on the realized pose of the previous one and perturbed by the
    noise model, so placement error chains upward; every placement is
    checked against the layer-1 brick, matching how a wall is judged
    against its manually placed base.
    """
    if layers < 2:
        raise ValueError("need at least 2 layers")
    counts = [0] * (layers - 1)
    children = np.random.SeedSequence(seed).spawn(rounds)
    up = np.asarray(up, dtype=float)
    up = up / np.linalg.norm(up)
    step = dims.H * up
    for round_seed in children:
        rng = np.random.default_rng(round_seed)
        base = BrickPose(np.eye(3), np.zeros(3))
        previous = base
        intact = True
        for layer in range(2, layers + 1):
            target = BrickPose(previous.rotation, previous.translation + previous.rotation @ step)
            realized = noise.perturb(target, rng)
            result = placement_check(realized, base, criteria, up)
            intact = intact and result.success
            if intact:
                counts[layer - 2] += 1
            previous = realized
    return counts
