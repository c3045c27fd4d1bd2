"""Deterministic detection scenes for validation and benchmarks.

``table6_scene`` crafts per-class detection outcomes whose 101-point
AP50 values land on 0.953 / 0.928 / 0.920 / 0.923 (to within a few 1e-5),
so the class mean reproduces the 0.931 teacher-model figure.  The crop
class (id 0) is present in the records and meant to be excluded.
"""

from __future__ import annotations

import math

from .deteval import Box, Detection, GroundTruthBox
from .tensor import Rng

__all__ = [
    "TABLE6_CLASS_APS",
    "CROP_CLASS_ID",
    "table6_scene",
    "craft_class_records",
    "random_scene",
    "synthetic_eval_scene",
]

# Per-class AP50 targets; their mean is 0.931.
TABLE6_CLASS_APS = {1: 0.953, 2: 0.928, 3: 0.920, 4: 0.923}
CROP_CLASS_ID = 0
_GT_PER_CLASS = 100


def _ap_construction(target: float, total_gt: int = _GT_PER_CLASS) -> tuple[int, int]:
    """(true positives before FP run, false positives) for a target AP50.

    The detector finds k+1 of ``total_gt`` boxes: k at full precision, then
    f false positives, then one last hit.  The 101-point AP of that curve
    is ((k+1) + (k+1)/(k+1+f)) / 101; f is chosen to land on the target.
    """
    m = math.floor(target * 101)  # grid points held at precision 1.0
    k = m - 1
    remainder = target * 101 - m
    if remainder <= 0:
        return k, 0
    best_f, best_err = 0, abs((m + 1.0) / 101.0 - target)
    for f in range(0, 2000):
        ap = (m + m / (m + f)) / 101.0
        err = abs(ap - target)
        if err < best_err:
            best_f, best_err = f, err
    return k, best_f


def craft_class_records(class_id: int, target_ap: float) -> tuple[list[Detection], list[GroundTruthBox]]:
    """A single-class scene whose AP50 is ``target_ap`` (within ~5e-5)."""
    k, f = _ap_construction(target_ap)
    gts = [
        GroundTruthBox(f"c{class_id}_img{i}", class_id, Box(10.0 * i, 0.0, 8.0, 8.0))
        for i in range(_GT_PER_CLASS)
    ]
    dets: list[Detection] = []
    rank = 0

    def score() -> float:
        nonlocal rank
        rank += 1
        return 1.0 - rank / 5000.0

    for i in range(k):  # exact hits, highest confidence
        dets.append(Detection(gts[i].image_id, class_id, gts[i].box, score()))
    for j in range(f):  # false positives on empty images
        dets.append(Detection(f"c{class_id}_fp{j}", class_id, Box(0.0, 50.0, 8.0, 8.0), score()))
    dets.append(Detection(gts[k].image_id, class_id, gts[k].box, score()))  # final hit
    return dets, gts


def table6_scene() -> tuple[list[Detection], list[GroundTruthBox]]:
    """Four weed classes at the target APs plus the to-be-excluded crop class."""
    dets: list[Detection] = []
    gts: list[GroundTruthBox] = []
    for class_id, target in TABLE6_CLASS_APS.items():
        d, g = craft_class_records(class_id, target)
        dets += d
        gts += g
    # Crop class: deliberately messy (would drag the mean down if included).
    for i in range(10):
        img = f"crop_img{i}"
        gts.append(GroundTruthBox(img, CROP_CLASS_ID, Box(10.0 * i, 100.0, 8.0, 8.0)))
        if i % 2 == 0:
            dets.append(Detection(img, CROP_CLASS_ID, Box(10.0 * i, 100.0, 8.0, 8.0), 0.9))
        else:
            dets.append(Detection(img, CROP_CLASS_ID, Box(10.0 * i + 30.0, 100.0, 8.0, 8.0), 0.8))
    return dets, gts


def random_scene(
    rng: Rng,
    n_images: int = 3,
    class_ids: tuple[int, ...] = (0, 1, 2),
    max_boxes_per_class: int = 6,
) -> tuple[list[Detection], list[GroundTruthBox]]:
    """Small randomized scene for oracle comparisons (<= 6 boxes per class/image)."""
    dets: list[Detection] = []
    gts: list[GroundTruthBox] = []
    for img_idx in range(n_images):
        img = f"img{img_idx}"
        for cid in class_ids:
            sub = rng.split(img_idx * 131 + cid)
            n_gt = int(sub.uniform(1)[0] * (max_boxes_per_class + 1))
            n_det = int(sub.uniform(1)[0] * (max_boxes_per_class + 1))
            for g in range(n_gt):
                x, y = sub.uniform(2) * 16.0
                w, h = 2.0 + sub.uniform(2) * 6.0
                gts.append(GroundTruthBox(img, cid, Box(float(x), float(y), float(w), float(h))))
            for d in range(n_det):
                u = sub.uniform(4)
                score = round(float(u[0]), 3)
                if gts and u[1] < 0.7:  # jittered copy of some ground-truth box
                    base = gts[int(u[2] * len(gts))].box
                    dx, dy = (sub.uniform(2) - 0.5) * 4.0
                    box = Box(max(0.0, base.x + float(dx)), max(0.0, base.y + float(dy)), base.w, base.h)
                else:
                    x, y = sub.uniform(2) * 16.0
                    w, h = 2.0 + sub.uniform(2) * 6.0
                    box = Box(float(x), float(y), float(w), float(h))
                dets.append(Detection(img, cid, box, min(1.0, max(0.0, score))))
    return dets, gts


def synthetic_eval_scene(rng: Rng, n_boxes: int) -> tuple[list[Detection], list[GroundTruthBox]]:
    """Benchmark-sized scene: ~n_boxes detections over a grid of ground truths."""
    dets: list[Detection] = []
    gts: list[GroundTruthBox] = []
    images = max(1, n_boxes // 25)
    i = 0
    while len(dets) < n_boxes:
        img = f"bench_img{i % images}"
        cid = i % 4
        x = float(10 * (i % 50))
        y = float(10 * ((i // 50) % 50))
        gts.append(GroundTruthBox(img, cid, Box(x, y, 8.0, 8.0)))
        jitter = float(rng.uniform(1)[0] * 4.0 - 2.0)
        dets.append(Detection(img, cid, Box(x + jitter, y, 8.0, 8.0), float(rng.uniform(1)[0])))
        i += 1
    return dets, gts
