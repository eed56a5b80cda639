"""Target assignment, loss, box coding and NMS for the dense head.

Boxes are normalized ``(x1, y1, x2, y2)``. A positive cell predicts the
distances from its centre to the four box sides, in units of its stride.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .model import STRIDES, ScalePreds

LOSS_WEIGHTS = {"obj": 1.0, "cls": 0.5, "box": 2.0}


class Targets(NamedTuple):
    obj: torch.Tensor    # b x 1 x h x w, 1 at positive cells
    cls: torch.Tensor    # b x K x h x w one-hot at positive cells
    box: torch.Tensor    # b x 4 x h x w normalized xyxy at positive cells
    stride: int


@dataclass
class LossBreakdown:
    obj: torch.Tensor
    cls: torch.Tensor
    box: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("obj", "cls", "box", "total")}


def choose_level(box, image_size: int, strides: Sequence[int] = STRIDES) -> int:
    """Index of the largest stride whose level the box is big enough for
    (max side >= 2 * stride / image_size); level 0 otherwise."""
    x1, y1, x2, y2 = box
    side = max(x2 - x1, y2 - y1)
    for i in range(len(strides) - 1, 0, -1):
        if side >= 2 * strides[i] / image_size:
            return i
    return 0


def _cell(box, grid: int) -> tuple[int, int]:
    cx = (box[0] + box[2]) / 2
    cy = (box[1] + box[3]) / 2
    return min(int(cy * grid), grid - 1), min(int(cx * grid), grid - 1)


def assign_targets(gts: Sequence[Sequence[tuple[int, Sequence[float]]]], image_size: int,
                   num_classes: int, strides: Sequence[int] = STRIDES,
                   dtype=torch.float32) -> list[Targets]:
    """One positive cell per ground truth: the cell holding its centre on the
    level picked by :func:`choose_level`. ``gts[i]`` is the list of
    ``(class_id, xyxy)`` for image i. When two boxes land in the same cell the
    smaller one keeps it and the other gets no positive."""
    b = len(gts)
    grids = [image_size // s for s in strides]
    obj = [torch.zeros(b, 1, g, g, dtype=dtype) for g in grids]
    cls = [torch.zeros(b, num_classes, g, g, dtype=dtype) for g in grids]
    box = [torch.zeros(b, 4, g, g, dtype=dtype) for g in grids]
    for i, items in enumerate(gts):
        ordered = []
        for k, (c, bx) in enumerate(items):
            x1, y1, x2, y2 = map(float, bx)
            if not (x2 > x1 and y2 > y1):
                raise ValueError(f"degenerate ground-truth box {tuple(bx)} in image {i}")
            if not 0 <= c < num_classes:
                raise ValueError(f"class id {c} outside [0, {num_classes})")
            ordered.append(((x2 - x1) * (y2 - y1), k, int(c), (x1, y1, x2, y2)))
        ordered.sort()
        for _, _, c, bx in ordered:
            lvl = choose_level(bx, image_size, strides)
            r, col = _cell(bx, grids[lvl])
            if obj[lvl][i, 0, r, col]:
                continue
            obj[lvl][i, 0, r, col] = 1
            cls[lvl][i, c, r, col] = 1
            box[lvl][i, :, r, col] = torch.tensor(bx, dtype=dtype)
    return [Targets(o, c, bx, s) for o, c, bx, s in zip(obj, cls, box, strides)]


def cell_centres(grid: int, stride: int, image_size: int, dtype=torch.float32):
    """Normalized (cx, cy) of every cell, each grid x grid."""
    idx = (torch.arange(grid, dtype=dtype) + 0.5) * stride / image_size
    cy, cx = torch.meshgrid(idx, idx, indexing="ij")
    return cx, cy


def distances_to_boxes(dist, stride: int, image_size: int):
    """b x 4 x h x w (l, t, r, b) stride units -> b x 4 x h x w normalized xyxy."""
    grid = dist.shape[-1]
    cx, cy = cell_centres(grid, stride, image_size, dist.dtype)
    s = stride / image_size
    return torch.stack([cx - dist[:, 0] * s, cy - dist[:, 1] * s,
                        cx + dist[:, 2] * s, cy + dist[:, 3] * s], dim=1)


def encode_box(box, row: int, col: int, stride: int, image_size: int) -> np.ndarray:
    """Distances (l, t, r, b) in stride units from cell (row, col) to ``box``."""
    s = stride / image_size
    cx = (col + 0.5) * s
    cy = (row + 0.5) * s
    x1, y1, x2, y2 = box
    return np.array([(cx - x1) / s, (cy - y1) / s, (x2 - cx) / s, (y2 - cy) / s])


def inverse_softplus(y):
    y = torch.as_tensor(y, dtype=torch.float64)
    return y + torch.log(-torch.expm1(-y))


def box_iou_aligned(a, b, eps: float = 1e-12):
    """IoU of matching boxes; a, b are ... x 4 xyxy."""
    iw = (torch.minimum(a[..., 2], b[..., 2]) - torch.maximum(a[..., 0], b[..., 0])).clamp(min=0)
    ih = (torch.minimum(a[..., 3], b[..., 3]) - torch.maximum(a[..., 1], b[..., 1])).clamp(min=0)
    inter = iw * ih
    area_a = (a[..., 2] - a[..., 0]).clamp(min=0) * (a[..., 3] - a[..., 1]).clamp(min=0)
    area_b = (b[..., 2] - b[..., 0]).clamp(min=0) * (b[..., 3] - b[..., 1]).clamp(min=0)
    return inter / (area_a + area_b - inter + eps)


def detection_loss(preds: Sequence[ScalePreds], targets: Sequence[Targets],
                   image_size: int) -> LossBreakdown:
    """BCE objectness over all cells, BCE classes and 1 - IoU on positives.

    Objectness and class sums are divided by max(1, #positives); the box term
    is the mean over positives. Zero positives give zero class and box terms.
    """
    dtype = preds[0].obj.dtype
    n_pos = sum(t.obj.sum() for t in targets)
    norm = torch.clamp(n_pos, min=1.0).to(dtype)
    obj = torch.zeros((), dtype=dtype)
    cls = torch.zeros((), dtype=dtype)
    box = torch.zeros((), dtype=dtype)
    for p, t in zip(preds, targets):
        obj = obj + F.binary_cross_entropy_with_logits(p.obj, t.obj, reduction="sum")
        mask = t.obj[:, 0] > 0
        if mask.any():
            cls = cls + F.binary_cross_entropy_with_logits(
                p.cls.permute(0, 2, 3, 1)[mask], t.cls.permute(0, 2, 3, 1)[mask], reduction="sum")
            pred_boxes = distances_to_boxes(p.box, p.stride, image_size).permute(0, 2, 3, 1)[mask]
            tgt_boxes = t.box.permute(0, 2, 3, 1)[mask]
            box = box + (1 - box_iou_aligned(pred_boxes, tgt_boxes)).sum()
    obj, cls, box = obj / norm, cls / norm, box / norm
    total = LOSS_WEIGHTS["obj"] * obj + LOSS_WEIGHTS["cls"] * cls + LOSS_WEIGHTS["box"] * box
    return LossBreakdown(obj, cls, box, total)


def nms(boxes: np.ndarray, scores: np.ndarray, iou_thresh: float) -> list[int]:
    """Greedy NMS; indices of kept boxes in descending score (stable on ties)."""
    order = np.argsort(-scores, kind="stable")
    keep: list[int] = []
    while order.size:
        i = order[0]
        keep.append(int(i))
        rest = order[1:]
        if not rest.size:
            break
        xx1 = np.maximum(boxes[i, 0], boxes[rest, 0])
        yy1 = np.maximum(boxes[i, 1], boxes[rest, 1])
        xx2 = np.minimum(boxes[i, 2], boxes[rest, 2])
        yy2 = np.minimum(boxes[i, 3], boxes[rest, 3])
        inter = np.clip(xx2 - xx1, 0, None) * np.clip(yy2 - yy1, 0, None)
        area = lambda b: (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
        iou = inter / np.maximum(area(boxes[i]) + area(boxes[rest]) - inter, 1e-12)
        order = rest[iou <= iou_thresh]
    return keep


@torch.no_grad()
def decode(preds: Sequence[ScalePreds], image_size: int, conf_thresh: float = 0.25,
           nms_iou: float = 0.6, max_det: int = 100) -> list[np.ndarray]:
    """Per image an array of rows ``(x1, y1, x2, y2, score, class)`` sorted by
    score. Score is sigmoid(objectness) * sigmoid(class logit) of the best
    class per cell; NMS is run per class."""
    if not (0 <= conf_thresh <= 1 and 0 <= nms_iou <= 1):
        raise ValueError("thresholds must lie in [0, 1]")
    per_image: list[list[np.ndarray]] = [[] for _ in range(preds[0].obj.shape[0])]
    for p in preds:
        boxes = distances_to_boxes(p.box.double(), p.stride, image_size).clamp(0, 1)
        scores = torch.sigmoid(p.obj.double()) * torch.sigmoid(p.cls.double())
        best, label = scores.max(dim=1)
        for i in range(boxes.shape[0]):
            keep = best[i] > conf_thresh
            if keep.any():
                rows = torch.cat([boxes[i].permute(1, 2, 0)[keep], best[i][keep][:, None],
                                  label[i][keep][:, None].double()], dim=1)
                per_image[i].append(rows.numpy())
    out = []
    for rows in per_image:
        if not rows:
            out.append(np.zeros((0, 6)))
            continue
        rows = np.concatenate(rows)
        rows = rows[(rows[:, 2] > rows[:, 0]) & (rows[:, 3] > rows[:, 1])]
        kept = []
        for c in np.unique(rows[:, 5]):
            sub = rows[rows[:, 5] == c]
            kept.append(sub[nms(sub[:, :4], sub[:, 4], nms_iou)])
        rows = np.concatenate(kept) if kept else np.zeros((0, 6))
        rows = rows[np.argsort(-rows[:, 4], kind="stable")][:max_det]
        out.append(rows)
    return out
