"""Brute-force reference evaluation for small instances.

Deliberately shares no code with :mod:`deyolo_toy.metrics`: IoU comes from
polygon geometry, matching from exhaustive enumeration of assignments, AP
from scanning every prefix of the ranked list.
"""
from __future__ import annotations

import itertools
import math
from collections import defaultdict

from shapely.geometry import box as shp_box

THRESHOLDS = [0.5 + 0.05 * i for i in range(10)]


def iou_oracle(a, b) -> float:
    pa, pb = shp_box(*a), shp_box(*b)
    return pa.intersection(pb).area / pa.union(pb).area


def _ranked(dets):
    # stable: equal scores keep input order
    return [d for _, d in sorted(enumerate(dets), key=lambda t: (-t[1].score, t[0]))]


def match_oracle(dets, gts, thresh, class_aware=True):
    """TP flags for ``dets`` (in the given order) by enumerating every partial
    one-to-one assignment per (image, class) group and keeping the one whose
    per-detection sequence of (IoU, -gt index) keys is lexicographically largest,
    an unmatched detection scoring lowest."""
    groups = defaultdict(lambda: ([], []))
    for i, d in enumerate(dets):
        groups[(d.image_id, d.class_id if class_aware else None)][0].append(i)
    for g in gts:
        key = (g.image_id, g.class_id if class_aware else None)
        if key in groups:
            groups[key][1].append(g)
    flags = [False] * len(dets)
    for det_idx, group_gts in groups.values():
        m = len(group_gts)
        best_key, best_assign = None, None
        for assign in itertools.product(range(-1, m), repeat=len(det_idx)):
            used = [a for a in assign if a >= 0]
            if len(used) != len(set(used)):
                continue
            key = []
            ok = True
            for i, a in zip(det_idx, assign):
                if a < 0:
                    key.append((-1.0, 0))
                    continue
                v = iou_oracle(dets[i].box, group_gts[a].box)
                if v < thresh:
                    ok = False
                    break
                key.append((v, -a))
            if ok and (best_key is None or key > best_key):
                best_key, best_assign = key, assign
        for i, a in zip(det_idx, best_assign):
            flags[i] = a >= 0
    return flags


def ap_oracle(flags, n_gt):
    if n_gt == 0:
        return None
    points = []
    tp = fp = 0
    for f in flags:
        tp += f
        fp += not f
        points.append((tp / n_gt, tp / (tp + fp)))
    total = 0.0
    for k in range(101):
        r = k / 100
        eligible = [p for rec, p in points if rec >= r - 1e-12]
        total += max(eligible) if eligible else 0.0
    return total / 101


def map_oracle(dets, gts, thresh):
    ranked = _ranked(dets)
    flags = match_oracle(ranked, gts, thresh)
    classes = sorted({g.class_id for g in gts})
    if not classes:
        return 0.0
    aps = []
    for c in classes:
        f = [fl for d, fl in zip(ranked, flags) if d.class_id == c]
        aps.append(ap_oracle(f, sum(1 for g in gts if g.class_id == c)))
    return sum(aps) / len(aps)


def map50_95_oracle(dets, gts):
    return sum(map_oracle(dets, gts, t) for t in THRESHOLDS) / len(THRESHOLDS)


def lamr_oracle_from_flags(flags, n_gt, n_images):
    """Miss rate at each FPPI reference = smallest miss rate over all score
    cut-offs (including 'no detections') whose FPPI does not exceed it."""
    refs = [10 ** (-2 + 0.25 * i) for i in range(9)]
    curve = [(0.0, 1.0 if n_gt else 0.0)]
    tp = fp = 0
    for f in flags:
        tp += f
        fp += not f
        curve.append((fp / n_images, 1 - tp / n_gt if n_gt else 0.0))
    logs = []
    for ref in refs:
        mr = min(m for fppi, m in curve if fppi <= ref * (1 + 1e-12))
        logs.append(math.log(max(mr, 1e-10)))
    return math.exp(sum(logs) / len(logs))


def lamr_oracle(dets, gts, n_images):
    ranked = _ranked(dets)
    flags = match_oracle(ranked, gts, 0.5, class_aware=False)
    return lamr_oracle_from_flags(flags, len(gts), n_images)
