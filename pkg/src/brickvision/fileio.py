"""File formats for scene bundles and structured results.

All JSON emitted here is deterministic: keys sorted, floats rounded to 9
significant digits, trailing newline. Instance masks are 16-bit binary PGM
(P5, maxval 65535, big-endian), with the instance->class map carried in the
bundle's spec.json.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .cloud import PointCloud, read_ply, write_ply
from .codec import FormatError
from .geom import BrickClass, InstanceMask, RotatedBox
from .pose import BrickPose


def json_ready(obj):
    """Recursively convert to JSON-safe types, floats at 9 significant digits."""
    if isinstance(obj, float):
        return float(f"{obj:.9g}")
    if isinstance(obj, (np.floating,)):
        return float(f"{float(obj):.9g}")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return json_ready(obj.tolist())
    if isinstance(obj, dict):
        return {k: json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_ready(v) for v in obj]
    return obj


def dump_json(obj, path) -> None:
    with open(path, "w") as f:
        json.dump(json_ready(obj), f, indent=2, sort_keys=True)
        f.write("\n")


def load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed JSON in {path}: {exc}") from exc


def write_pgm16(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError("PGM labels must be 2-D")
    if labels.min() < 0 or labels.max() > 65535:
        raise ValueError("labels out of uint16 range")
    h, w = labels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode())
        f.write(labels.astype(">u2").tobytes())


def read_pgm16(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise FormatError(f"not a binary PGM: magic {fields[0]!r}")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 65535:
        raise FormatError(f"expected 16-bit PGM, maxval {maxval}")
    data = np.frombuffer(raw[pos : pos + 2 * w * h], dtype=">u2")
    if data.size != w * h:
        raise FormatError("PGM payload truncated")
    return data.reshape(h, w).astype(np.uint16)


SCENE_FILES = ("cloud.ply", "mask.pgm", "boxes.json", "poses.json", "spec.json")


def write_scene_bundle(directory, render, scene_spec, seed: int) -> list[str]:
    """Write one rendered scene: cloud.ply, mask.pgm, boxes.json, poses.json, spec.json."""
    os.makedirs(directory, exist_ok=True)
    write_ply(render.cloud, os.path.join(directory, "cloud.ply"))
    write_pgm16(render.mask.labels, os.path.join(directory, "mask.pgm"))
    boxes = [
        {**box.to_dict(), "instance_id": inst}
        for box, inst in zip(render.boxes, render.instance_ids)
    ]
    dump_json(boxes, os.path.join(directory, "boxes.json"))
    poses = [
        {**pose.to_dict(), "instance_id": inst}
        for pose, inst in zip(render.poses, render.instance_ids)
    ]
    dump_json(poses, os.path.join(directory, "poses.json"))
    cam = scene_spec.camera
    spec_doc = {
        "seed": seed,
        "noise_sigma": scene_spec.noise_sigma,
        "camera": {
            "fx": cam.fx,
            "fy": cam.fy,
            "cx": cam.cx,
            "cy": cam.cy,
            "width": cam.width,
            "height": cam.height,
        },
        "bricks": [
            {
                "instance_id": i + 1,
                "class": b.class_id.value,
                "dims": [b.dims.L, b.dims.W, b.dims.H],
                "R": b.pose.rotation.tolist(),
                "t": b.pose.translation.tolist(),
            }
            for i, b in enumerate(scene_spec.bricks)
        ],
        "classes": {str(i): c.value for i, c in render.mask.class_of.items()},
    }
    dump_json(spec_doc, os.path.join(directory, "spec.json"))
    return list(SCENE_FILES)


def read_mask(directory) -> InstanceMask:
    labels = read_pgm16(os.path.join(directory, "mask.pgm"))
    spec_doc = load_json(os.path.join(directory, "spec.json"))
    class_of = {int(k): BrickClass(v) for k, v in spec_doc["classes"].items()}
    return InstanceMask(labels, class_of)


def read_boxes(path) -> list[RotatedBox]:
    doc = load_json(path)
    if isinstance(doc, dict):
        doc = doc.get("boxes", [doc])
    if not isinstance(doc, list):
        raise FormatError(f"{path}: expected a box object or list of boxes")
    try:
        return [RotatedBox.from_dict(d) for d in doc]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad box record: {exc}") from exc


def read_cloud(directory) -> PointCloud:
    return read_ply(os.path.join(directory, "cloud.ply"))


def read_gt_poses(directory) -> list[tuple[int, BrickPose]]:
    doc = load_json(os.path.join(directory, "poses.json"))
    return [(int(d["instance_id"]), BrickPose.from_dict(d)) for d in doc]
