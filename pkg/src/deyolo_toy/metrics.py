"""Detection metrics: IoU, greedy matching, 101-point AP, mAP50, mAP50-95
and log-average miss rate.

Detections and ground truths are plain records; boxes are normalized
``(x1, y1, x2, y2)``. Score ties keep input order (stable sort).
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.arange(101) / 100
LAMR_FPPI = np.logspace(-2.0, 0.0, 9)
MR_FLOOR = 1e-10


@dataclass(frozen=True)
class Detection:
    image_id: str | int
    class_id: int
    box: tuple[float, float, float, float]
    score: float


@dataclass(frozen=True)
class GtBox:
    image_id: str | int
    class_id: int
    box: tuple[float, float, float, float]


@dataclass
class EvalReport:
    per_class: dict[int, float]
    map50: float
    map50_95: float
    lamr: float
    pr_points: dict[int, list[tuple[float, float]]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "map50": self.map50,
            "map50_95": self.map50_95,
            "lamr": self.lamr,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
        }


def _check_box(b) -> None:
    if not (b[2] > b[0] and b[3] > b[1]):
        raise ValueError(f"degenerate box {tuple(b)}")


def iou(a, b) -> float:
    _check_box(a)
    _check_box(b)
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def sort_by_score(dets: Sequence[Detection]) -> list[Detection]:
    return sorted(dets, key=lambda d: -d.score)


def match_detections(dets: Sequence[Detection], gts: Sequence[GtBox], iou_thresh: float,
                     class_aware: bool = True) -> list[bool]:
    """TP flag per detection, in the order given (expected: descending score).

    Within each image (and class, if ``class_aware``), every detection takes the
    still-unmatched ground truth with highest IoU >= ``iou_thresh``; ties on
    IoU go to the earlier ground truth.
    """
    pool: dict[tuple, list[GtBox]] = defaultdict(list)
    for g in gts:
        pool[(g.image_id, g.class_id if class_aware else None)].append(g)
    used: dict[tuple, set[int]] = defaultdict(set)
    flags = []
    for d in dets:
        key = (d.image_id, d.class_id if class_aware else None)
        best, best_j = iou_thresh, -1
        for j, g in enumerate(pool.get(key, ())):
            if j in used[key]:
                continue
            v = iou(d.box, g.box)
            if v >= best and (best_j < 0 or v > best):
                best, best_j = v, j
        if best_j >= 0:
            used[key].add(best_j)
        flags.append(best_j >= 0)
    return flags


def pr_curve(flags: Sequence[bool], n_gt: int) -> tuple[np.ndarray, np.ndarray]:
    tp = np.cumsum(np.asarray(flags, dtype=float))
    fp = np.cumsum(1.0 - np.asarray(flags, dtype=float))
    recall = tp / n_gt if n_gt else np.zeros_like(tp)
    precision = tp / np.maximum(tp + fp, np.finfo(float).tiny)
    return recall, precision


def average_precision(flags: Sequence[bool], n_gt: int) -> float | None:
    """101-point interpolated AP. ``None`` when the class has no ground truth
    (it is then left out of the mean)."""
    if n_gt == 0:
        return None
    if not len(flags):
        return 0.0
    recall, precision = pr_curve(flags, n_gt)
    # precision envelope: best precision at any recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # tolerance so that e.g. recall 7/10 counts as reaching the 0.70 point
    idx = np.searchsorted(recall, RECALL_POINTS - 1e-12, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


def class_aps(dets: Sequence[Detection], gts: Sequence[GtBox], iou_thresh: float) -> dict[int, float]:
    n_gt: dict[int, int] = defaultdict(int)
    for g in gts:
        n_gt[g.class_id] += 1
    ordered = sort_by_score(dets)
    flags = match_detections(ordered, gts, iou_thresh)
    by_class: dict[int, list[bool]] = defaultdict(list)
    for d, f in zip(ordered, flags):
        by_class[d.class_id].append(f)
    out = {}
    for c in sorted(n_gt):
        out[c] = average_precision(by_class.get(c, []), n_gt[c])
    return out


def mean_ap(dets, gts, iou_thresh: float) -> float:
    aps = class_aps(dets, gts, iou_thresh)
    return float(np.mean(list(aps.values()))) if aps else 0.0


def map_metrics(dets: Sequence[Detection], gts: Sequence[GtBox],
                n_images: int | None = None) -> EvalReport:
    per_class = class_aps(dets, gts, 0.5)
    map50 = float(np.mean(list(per_class.values()))) if per_class else 0.0
    map50_95 = float(np.mean([mean_ap(dets, gts, t) for t in IOU_THRESHOLDS]))
    if n_images is None:
        n_images = len({g.image_id for g in gts} | {d.image_id for d in dets})
    ordered = sort_by_score(dets)
    flags = match_detections(ordered, gts, 0.5)
    pr = {}
    for c in per_class:
        f = [fl for d, fl in zip(ordered, flags) if d.class_id == c]
        n = sum(1 for g in gts if g.class_id == c)
        r, p = pr_curve(f, n)
        pr[c] = list(zip(r.tolist(), p.tolist()))
    return EvalReport(per_class, map50, map50_95,
                      lamr(dets, gts, n_images) if n_images else 1.0, pr)


def miss_rate_curve(flags: Sequence[bool], n_gt: int, n_images: int):
    """(fppi, miss_rate) at every score cut-off, starting from the empty set."""
    f = np.asarray(flags, dtype=float)
    tp = np.concatenate([[0.0], np.cumsum(f)])
    fp = np.concatenate([[0.0], np.cumsum(1.0 - f)])
    mr = 1.0 - tp / n_gt if n_gt else np.zeros_like(tp)
    return fp / n_images, mr


def lamr_from_flags(flags: Sequence[bool], n_gt: int, n_images: int) -> float:
    if n_images <= 0:
        raise ValueError("LAMR needs at least one image")
    fppi, mr = miss_rate_curve(flags, n_gt, n_images)
    samples = []
    for ref in LAMR_FPPI:
        # last operating point whose fppi does not exceed ref
        k = int(np.searchsorted(fppi, ref, side="right")) - 1
        samples.append(max(mr[k], MR_FLOOR))
    return float(math.exp(np.mean(np.log(samples))))


def lamr(dets: Sequence[Detection], gts: Sequence[GtBox], n_images: int) -> float:
    """Class-merged log-average miss rate over FPPI in [1e-2, 1]."""
    if n_images <= 0:
        raise ValueError("LAMR needs at least one image")
    ordered = sort_by_score(dets)
    flags = match_detections(ordered, gts, 0.5, class_aware=False)
    return lamr_from_flags(flags, len(gts), n_images)


# --------------------------------------------------------------------------
# text formats

def write_detections(path, dets: Iterable[Detection]) -> None:
    """One JSON object per line: image_id, class, x1, y1, x2, y2, score."""
    with open(path, "w") as fh:
        for d in dets:
            fh.write(json.dumps({"image_id": d.image_id, "class": d.class_id,
                                 "x1": d.box[0], "y1": d.box[1], "x2": d.box[2],
                                 "y2": d.box[3], "score": d.score}) + "\n")


def read_detections(path) -> list[Detection]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                out.append(Detection(r["image_id"], int(r["class"]),
                                     (r["x1"], r["y1"], r["x2"], r["y2"]), float(r["score"])))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed detection record ({exc})") from None
    return out
