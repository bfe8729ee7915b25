"""Detection evaluation against instance-mask ground truth.

Pixel precision follows the object-pixel counting convention: summed over
predicted boxes, the fraction of in-box pixels that belong to an instance
of the box's class. Note the source definition literally reads as object
pixels over object pixels, which is identically 1; the denominator here is
all pixels in the predicted box, the only reading consistent with reported
sub-1.0 precisions. Both raw counts are exposed so callers can audit the
choice. Recall counts ground-truth bricks matched by at most one detection
each; mAP is VOC-style area under the interpolated P-R curve for upright
boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geom import (
    BrickClass,
    DegenerateInput,
    InstanceMask,
    RotatedBox,
    box_corners,
    is_axis_aligned,
    min_area_rect,
    points_in_convex_polygon,
    rotated_iou,
    upright_bbox,
)

# pixel-center membership tolerance (px); forgiving enough that a box fitted
# to mask pixels always covers its own hull pixels despite fp rounding
PIXEL_TOL = 1e-6


@dataclass
class EvalReport:
    precision: float | None
    recall: float
    map: float | None
    per_class: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "map": self.map,
            "per_class": self.per_class,
            "counts": self.counts,
        }


def _box_pixel_counts(box: RotatedBox, class_image: np.ndarray) -> tuple[int, int]:
    """(object pixels of the box's class, all pixels) inside a box, image-clipped."""
    h, w = class_image.shape
    poly = box_corners(box).vertices
    x0 = max(0, int(math.floor(poly[:, 0].min())))
    x1 = min(w - 1, int(math.ceil(poly[:, 0].max())))
    y0 = max(0, int(math.floor(poly[:, 1].min())))
    y1 = min(h - 1, int(math.ceil(poly[:, 1].max())))
    if x1 < x0 or y1 < y0:
        return 0, 0
    xs, ys = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
    pts = np.column_stack([xs.ravel(), ys.ravel()]).astype(float)
    inside = points_in_convex_polygon(pts, poly, tol=PIXEL_TOL)
    if not inside.any():
        return 0, 0
    sub = class_image[y0 : y1 + 1, x0 : x1 + 1].ravel()[inside]
    want = 1 if box.class_id is BrickClass.BLUE else 2
    return int((sub == want).sum()), int(inside.sum())


def pixel_precision(boxes: list[RotatedBox], gt: InstanceMask) -> float | None:
    """Class-matched object pixels over all pixels, summed over boxes.

    Returns None (undefined) rather than 0 when there are no predictions
    or no in-image box pixels.
    """
    value, _ = pixel_precision_with_counts(boxes, gt)
    return value


def pixel_precision_with_counts(
    boxes: list[RotatedBox], gt: InstanceMask
) -> tuple[float | None, dict]:
    class_image = gt.class_image()
    num = den = 0
    for box in boxes:
        n, d = _box_pixel_counts(box, class_image)
        num += n
        den += d
    counts = {"NO": num, "TP_pixels": den}
    if den == 0:
        return None, counts
    return num / den, counts


def _gt_entries(gt: InstanceMask):
    """Per instance: (class, center, min-area box or None)."""
    entries = []
    for inst in gt.instance_ids():
        pixels = gt.pixels_of(inst)
        try:
            box = min_area_rect(pixels, gt.class_of[inst])
            center = np.array([box.cx, box.cy])
        except DegenerateInput:
            box = None
            center = pixels.mean(axis=0)
        entries.append((gt.class_of[inst], center, box))
    return entries


def detection_recall(
    boxes: list[RotatedBox],
    gt: InstanceMask,
    match_rule: str = "center",
    iou_threshold: float = 0.5,
) -> float:
    value, _ = detection_recall_with_counts(boxes, gt, match_rule, iou_threshold)
    return value


def detection_recall_with_counts(
    boxes: list[RotatedBox],
    gt: InstanceMask,
    match_rule: str = "center",
    iou_threshold: float = 0.5,
) -> tuple[float, dict]:
    """Fraction of ground-truth bricks detected.

    Predictions are consumed greedily in descending score order and each
    may detect at most one brick (and each brick is detected at most once),
    so one box over two touching bricks only scores one of them.
    `match_rule` is "center" (instance box center inside the prediction) or
    "iou" (rotated IoU with the instance's min-area box >= threshold).
    """
    if match_rule not in ("center", "iou"):
        raise ValueError(f"unknown match rule {match_rule!r}")
    entries = _gt_entries(gt)
    total = len(entries)
    if total == 0:
        return 1.0, {"DB": 0, "TB": 0}
    matched = [False] * total
    detected = 0
    order = sorted(range(len(boxes)), key=lambda i: -boxes[i].score)
    for bi in order:
        box = boxes[bi]
        best, best_key = -1, None
        if match_rule == "center":
            poly = box_corners(box).vertices
            for gi, (cls, center, _) in enumerate(entries):
                if matched[gi] or cls is not box.class_id:
                    continue
                if points_in_convex_polygon(center[None, :], poly, tol=PIXEL_TOL)[0]:
                    d = float(np.hypot(center[0] - box.cx, center[1] - box.cy))
                    if best_key is None or d < best_key:
                        best, best_key = gi, d
        else:
            for gi, (cls, _, gbox) in enumerate(entries):
                if matched[gi] or cls is not box.class_id or gbox is None:
                    continue
                iou = rotated_iou(box, gbox)
                if iou >= iou_threshold and (best_key is None or iou > best_key):
                    best, best_key = gi, iou
        if best >= 0:
            matched[best] = True
            detected += 1
    return detected / total, {"DB": detected, "TB": total}


def _average_precision(tp_flags: list[bool], n_gt: int) -> float:
    if n_gt == 0:
        return 0.0
    tp = np.cumsum([1.0 if f else 0.0 for f in tp_flags])
    fp = np.cumsum([0.0 if f else 1.0 for f in tp_flags])
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1e-12)
    # interpolated envelope, then area under the P-R curve
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def map_score(
    boxes: list[RotatedBox], gt: InstanceMask, iou_threshold: float = 0.5
) -> float | None:
    """Mean average precision over classes, upright boxes only.

    Ground truth per instance is the axis-aligned bounding box of its mask
    pixels. Classes without ground truth are skipped; returns None when no
    class has any ground truth.
    """
    for box in boxes:
        if not is_axis_aligned(box, tol=1e-7):
            raise ValueError("map_score expects axis-aligned boxes")
    gt_boxes: dict[BrickClass, list[RotatedBox]] = {c: [] for c in BrickClass}
    for inst in gt.instance_ids():
        pixels = gt.pixels_of(inst)
        x0, y0 = pixels.min(axis=0)
        x1, y1 = pixels.max(axis=0)
        cls = gt.class_of[inst]
        if x1 > x0 and y1 > y0:
            gt_boxes[cls].append(
                RotatedBox(0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0, 0.0, cls)
            )
    aps = []
    for cls in BrickClass:
        targets = gt_boxes[cls]
        if not targets:
            continue
        dets = [b for b in boxes if b.class_id is cls]
        dets.sort(key=lambda b: -b.score)
        used = [False] * len(targets)
        flags = []
        for det in dets:
            best, best_iou = -1, iou_threshold
            for gi, tgt in enumerate(targets):
                if used[gi]:
                    continue
                iou = rotated_iou(det, tgt)
                if iou >= best_iou:
                    best, best_iou = gi, iou
            if best >= 0:
                used[best] = True
                flags.append(True)
            else:
                flags.append(False)
        aps.append(_average_precision(flags, len(targets)))
    if not aps:
        return None
    return float(np.mean(aps))


def compare_rotated_vs_upright(
    scenes: list[tuple[list[RotatedBox], InstanceMask]]
) -> list[tuple[float, float]]:
    """Per scene: pixel precision of the given rotated boxes vs the same
    boxes replaced by their upright hulls."""
    pairs = []
    for boxes, mask in scenes:
        p_rot = pixel_precision(boxes, mask)
        p_up = pixel_precision([upright_bbox(b) for b in boxes], mask)
        pairs.append((p_rot, p_up))
    return pairs


def evaluate(
    boxes: list[RotatedBox],
    gt: InstanceMask,
    mode: str = "rotated",
    match_rule: str = "center",
    iou_threshold: float = 0.5,
) -> EvalReport:
    """Full report for one scene; mAP only in upright mode."""
    if mode not in ("rotated", "upright"):
        raise ValueError(f"unknown mode {mode!r}")
    precision, pix_counts = pixel_precision_with_counts(boxes, gt)
    recall, det_counts = detection_recall_with_counts(boxes, gt, match_rule, iou_threshold)
    mean_ap = map_score(boxes, gt, iou_threshold) if mode == "upright" else None
    per_class = {}
    for cls in BrickClass:
        cls_boxes = [b for b in boxes if b.class_id is cls]
        sub_mask = InstanceMask(
            np.where(np.isin(gt.labels, [i for i, c in gt.class_of.items() if c is cls]), gt.labels, 0),
            {i: c for i, c in gt.class_of.items() if c is cls},
        )
        p, _ = pixel_precision_with_counts(cls_boxes, sub_mask)
        r, c = detection_recall_with_counts(cls_boxes, sub_mask, match_rule, iou_threshold)
        per_class[cls.value] = {"precision": p, "recall": r if c["TB"] else None, "n_gt": c["TB"]}
    return EvalReport(precision, recall, mean_ap, per_class, {**pix_counts, **det_counts})
