"""Grid-cell detection target codec.

Encodes ground-truth instances into a rows x cols x 8 tensor (per-cell class
probabilities plus normalized box parameters) and decodes such tensors back
into rotated boxes. One 16 px cell owns at most one instance: the one whose
rotated-box centroid falls inside it, ties broken by the larger fraction of
the instance's mask inside the cell.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .geom import BrickClass, InstanceMask, RotatedBox, min_area_rect

# channel layout of one grid cell
CH_P_BLUE = 0
CH_P_GREEN = 1
CH_P_BACKGROUND = 2
CH_X_OFF = 3
CH_Y_OFF = 4
CH_W = 5
CH_H = 6
CH_THETA = 7
N_CHANNELS = 8

_MAGIC = 0x5242


class OutOfFrame(ValueError):
    """An instance's box centroid lies outside the image."""


class EncodingError(ValueError):
    """An instance's box cannot be represented in the normalized channels."""


class FormatError(ValueError):
    """A tensor file does not match the expected layout."""


@dataclass(frozen=True)
class EncodingConfig:
    image_w: int = 640
    image_h: int = 480
    cell: int = 16
    theta_max: float = math.pi
    conf_threshold: float = 0.5

    def __post_init__(self):
        if self.image_w % self.cell or self.image_h % self.cell:
            raise ValueError("image dimensions must be divisible by the cell size")

    @property
    def rows(self) -> int:
        return self.image_h // self.cell

    @property
    def cols(self) -> int:
        return self.image_w // self.cell


@dataclass
class GridTensor:
    """Detection target/prediction tensor of shape (rows, cols, 8), values in [0,1]."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != N_CHANNELS:
            raise ValueError(f"tensor must have shape (rows, cols, {N_CHANNELS})")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def validate(self, tol: float = 1e-6) -> None:
        probs = self.data[:, :, CH_P_BLUE : CH_P_BACKGROUND + 1]
        if np.any(np.abs(probs.sum(axis=2) - 1.0) > tol):
            raise ValueError("class probabilities must sum to 1 per cell")
        if np.any(self.data < -tol) or np.any(self.data > 1.0 + tol):
            raise ValueError("all channels must lie in [0,1]")


def instances_from_mask(mask: InstanceMask) -> list[tuple[np.ndarray, BrickClass]]:
    """Per-instance (pixels, class) pairs in instance-id order."""
    return [(mask.pixels_of(i), mask.class_of[i]) for i in mask.instance_ids()]


def encode(instances: list[tuple[np.ndarray, BrickClass]], cfg: EncodingConfig = EncodingConfig()) -> GridTensor:
    """Build the target tensor for a list of (mask pixels, class) instances.

    Box parameters come from the min-area rotated rectangle of each
    instance's pixels. When two centroids land in the same cell the instance
    with the larger fraction of its own mask inside that cell wins; the
    loser is dropped from the targets entirely.
    """
    data = np.zeros((cfg.rows, cfg.cols, N_CHANNELS), dtype=np.float64)
    data[:, :, CH_P_BACKGROUND] = 1.0

    candidates: dict[tuple[int, int], list[tuple[float, int, RotatedBox, BrickClass]]] = {}
    for idx, (pixels, class_id) in enumerate(instances):
        box = min_area_rect(pixels, class_id)
        if not (0.0 <= box.cx < cfg.image_w and 0.0 <= box.cy < cfg.image_h):
            raise OutOfFrame(f"instance {idx} centroid ({box.cx}, {box.cy}) outside image")
        if box.w > cfg.image_w or box.h > cfg.image_h:
            raise EncodingError(f"instance {idx} box size {box.w}x{box.h} exceeds image dimensions")
        col = int(box.cx // cfg.cell)
        row = int(box.cy // cfg.cell)
        inside = (pixels[:, 0] // cfg.cell == col) & (pixels[:, 1] // cfg.cell == row)
        fraction = float(inside.sum()) / len(pixels)
        candidates.setdefault((row, col), []).append((fraction, idx, box, class_id))

    for (row, col), entries in candidates.items():
        # max fraction wins, earlier instance on exact ties
        fraction, _, box, class_id = max(entries, key=lambda e: (e[0], -e[1]))
        data[row, col, CH_P_BACKGROUND] = 0.0
        data[row, col, CH_P_BLUE if class_id is BrickClass.BLUE else CH_P_GREEN] = 1.0
        data[row, col, CH_X_OFF] = (box.cx - col * cfg.cell) / cfg.cell
        data[row, col, CH_Y_OFF] = (box.cy - row * cfg.cell) / cfg.cell
        data[row, col, CH_W] = box.w / cfg.image_w
        data[row, col, CH_H] = box.h / cfg.image_h
        data[row, col, CH_THETA] = box.theta / cfg.theta_max
    return GridTensor(data)


def encode_mask(mask: InstanceMask, cfg: EncodingConfig = EncodingConfig()) -> GridTensor:
    return encode(instances_from_mask(mask), cfg)


def decode(tensor: GridTensor, cfg: EncodingConfig = EncodingConfig()) -> list[RotatedBox]:
    """Rotated boxes for every cell whose winning class beats both the
    confidence threshold and the background probability."""
    boxes: list[RotatedBox] = []
    data = tensor.data
    for row in range(tensor.rows):
        for col in range(tensor.cols):
            cell = data[row, col]
            p_blue, p_green, p_bg = cell[CH_P_BLUE], cell[CH_P_GREEN], cell[CH_P_BACKGROUND]
            p_cls = max(p_blue, p_green)
            if p_cls <= cfg.conf_threshold or p_cls <= p_bg:
                continue
            boxes.append(
                RotatedBox(
                    cx=col * cfg.cell + cell[CH_X_OFF] * cfg.cell,
                    cy=row * cfg.cell + cell[CH_Y_OFF] * cfg.cell,
                    w=cell[CH_W] * cfg.image_w,
                    h=cell[CH_H] * cfg.image_h,
                    theta=cell[CH_THETA] * cfg.theta_max,
                    class_id=BrickClass.BLUE if p_blue >= p_green else BrickClass.GREEN,
                    score=p_cls,
                )
            )
    return boxes


def write_tensor(tensor: GridTensor, path) -> None:
    """Binary tensor file: 4 little-endian uint16 header fields
    (magic, rows, cols, channels) followed by row-major float32 data."""
    header = struct.pack("<4H", _MAGIC, tensor.rows, tensor.cols, N_CHANNELS)
    with open(path, "wb") as f:
        f.write(header)
        f.write(tensor.data.astype("<f4").tobytes())


def read_tensor(path, cfg: EncodingConfig = EncodingConfig()) -> GridTensor:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise FormatError("file too short for header")
    magic, rows, cols, channels = struct.unpack("<4H", raw[:8])
    if magic != _MAGIC:
        raise FormatError(f"bad magic 0x{magic:04X}")
    if (rows, cols, channels) != (cfg.rows, cfg.cols, N_CHANNELS):
        raise FormatError(
            f"tensor shape ({rows}, {cols}, {channels}) does not match expected "
            f"({cfg.rows}, {cfg.cols}, {N_CHANNELS})"
        )
    expected = rows * cols * channels * 4
    if len(raw) - 8 != expected:
        raise FormatError(f"payload is {len(raw) - 8} bytes, expected {expected}")
    data = np.frombuffer(raw[8:], dtype="<f4").reshape(rows, cols, channels)
    return GridTensor(data.astype(np.float64))
