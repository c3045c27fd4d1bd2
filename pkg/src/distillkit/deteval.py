"""COCO-protocol object-detection evaluation.

Boxes are axis-aligned (x, y, w, h).  Detections are matched to ground
truth greedily in descending score order: each detection takes the
still-unmatched ground-truth box with the highest IoU at or above the
threshold (IoU ties break toward the lower ground-truth input index,
score ties toward input order).  Average precision uses the 101-point
interpolation: the precision envelope is made monotone non-increasing,
then sampled at recalls 0.00, 0.01, ..., 1.00.

Class exclusion removes records from BOTH the detection and ground-truth
sides before any matching, exactly as if the records had been deleted
from the input files.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

__all__ = [
    "Box",
    "Detection",
    "GroundTruthBox",
    "EvalConfig",
    "ClassResult",
    "EvalResult",
    "iou",
    "match_detections",
    "pr_curve",
    "average_precision",
    "evaluate",
    "AP50_THRESHOLDS",
    "AP50_95_THRESHOLDS",
    "parse_detections_jsonl",
    "parse_ground_truth_jsonl",
]

AP50_THRESHOLDS = (0.50,)
AP50_95_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box: top-left corner plus extent, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ValueError("box extent must be non-negative")

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Detection:
    image_id: str
    class_id: int
    box: Box
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("detection score must lie in [0, 1]")


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: str
    class_id: int
    box: Box


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation settings.

    iou_thresholds must be strictly increasing in (0, 1] and contain 0.50;
    excluded_class_ids are removed from both detections and ground truth
    before matching; score_threshold picks the operating point at which
    the scalar precision/recall columns are reported.
    """

    iou_thresholds: tuple[float, ...] = AP50_95_THRESHOLDS
    excluded_class_ids: frozenset[int] = frozenset()
    score_threshold: float = 0.0

    def __post_init__(self):
        ts = tuple(self.iou_thresholds)
        if not ts:
            raise ValueError("at least one IoU threshold is required")
        if any(not (0.0 < t <= 1.0) for t in ts):
            raise ValueError("IoU thresholds must lie in (0, 1]")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("IoU thresholds must be strictly increasing")
        if 0.50 not in ts:
            raise ValueError("the 0.50 threshold is required (AP50 is always reported)")
        object.__setattr__(self, "iou_thresholds", ts)
        object.__setattr__(self, "excluded_class_ids", frozenset(self.excluded_class_ids))


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 when the union is degenerate.

    Areas are derived from the same corner arithmetic as the overlap so
    identical boxes score exactly 1.0.
    """
    ax2, ay2 = a.x + a.w, a.y + a.h
    bx2, by2 = b.x + b.w, b.y + b.h
    iw = min(ax2, bx2) - max(a.x, b.x)
    ih = min(ay2, by2) - max(a.y, b.y)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    area_a = (ax2 - a.x) * (ay2 - a.y)
    area_b = (bx2 - b.x) * (by2 - b.y)
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return min(inter / union, 1.0)


@dataclass
class MatchResult:
    """Per-detection TP labels in descending-score order, plus FN count."""

    order: list[int]          # detection indices sorted by (-score, input order)
    scores: list[float]       # scores in that order
    is_tp: list[bool]         # TP flag in that order
    matched_gt: list[int]     # matched gt input index, -1 for FP
    fn: int


def match_detections(
    dets: Sequence[Detection], gts: Sequence[GroundTruthBox], iou_threshold: float
) -> MatchResult:
    """Greedy confidence-ordered matching for a single class.

    Matching is per image; each ground-truth box is used at most once.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    gt_by_image: dict[str, list[int]] = {}
    for j, gt in enumerate(gts):
        gt_by_image.setdefault(gt.image_id, []).append(j)
    taken = [False] * len(gts)
    is_tp: list[bool] = []
    matched: list[int] = []
    for i in order:
        det = dets[i]
        best_j = -1
        best_iou = 0.0
        for j in gt_by_image.get(det.image_id, ()):
            if taken[j]:
                continue
            overlap = iou(det.box, gts[j].box)
            if overlap >= iou_threshold and overlap > best_iou:
                best_iou = overlap
                best_j = j
        if best_j >= 0:
            taken[best_j] = True
            is_tp.append(True)
            matched.append(best_j)
        else:
            is_tp.append(False)
            matched.append(-1)
    fn = taken.count(False)
    return MatchResult(order, [dets[i].score for i in order], is_tp, matched, fn)


def pr_curve(labels: Sequence[bool], total_gt: int) -> list[tuple[float, float]]:
    """Cumulative (precision, recall) per prefix of score-ordered TP labels.

    Empty when there is no ground truth: average precision over an empty
    curve is 0, and a class with neither ground truth nor detections is
    skipped from the mAP mean entirely by the caller.
    """
    if total_gt < 0:
        raise ValueError("total_gt must be non-negative")
    if total_gt == 0:
        return []
    pts = []
    tp = 0
    for k, label in enumerate(labels, start=1):
        tp += bool(label)
        pts.append((tp / k, tp / total_gt))
    return pts


def average_precision(curve: Sequence[tuple[float, float]]) -> float:
    """101-point interpolated AP over a (precision, recall) curve."""
    if not curve:
        return 0.0
    pts = sorted(curve, key=lambda pr: pr[1])
    recalls = [r for _, r in pts]
    env = [p for p, _ in pts]
    for i in range(len(env) - 2, -1, -1):
        env[i] = max(env[i], env[i + 1])
    total = 0.0
    j = 0
    for g in range(101):
        r = g / 100.0
        while j < len(recalls) and recalls[j] < r - 1e-12:
            j += 1
        if j < len(recalls):
            total += env[j]
    return total / 101.0


@dataclass
class ClassResult:
    class_id: int
    precision: float
    recall: float
    ap50: float
    ap50_95: float
    # per-threshold counts: threshold -> (tp, fp, fn)
    counts: dict[float, tuple[int, int, int]] = field(default_factory=dict)


@dataclass
class EvalResult:
    per_class: dict[int, ClassResult]
    map50: float
    map50_95: float
    included_class_ids: list[int]

    def to_dict(self) -> dict:
        return {
            "map50": self.map50,
            "map50_95": self.map50_95,
            "included_class_ids": self.included_class_ids,
            "per_class": {
                str(cid): {
                    "precision": r.precision,
                    "recall": r.recall,
                    "ap50": r.ap50,
                    "ap50_95": r.ap50_95,
                    "counts": {
                        f"{t:.2f}": {"tp": c[0], "fp": c[1], "fn": c[2]} for t, c in sorted(r.counts.items())
                    },
                }
                for cid, r in sorted(self.per_class.items())
            },
        }


def _eval_class(
    cid: int,
    dets: list[Detection],
    gts: list[GroundTruthBox],
    cfg: EvalConfig,
) -> ClassResult:
    aps: dict[float, float] = {}
    counts: dict[float, tuple[int, int, int]] = {}
    precision = recall = 0.0
    for t in cfg.iou_thresholds:
        match = match_detections(dets, gts, t)
        curve = pr_curve(match.is_tp, len(gts))
        aps[t] = average_precision(curve)
        tp = sum(match.is_tp)
        fp = len(match.is_tp) - tp
        counts[t] = (tp, fp, match.fn)
        if t == 0.50:
            kept = [lab for lab, s in zip(match.is_tp, match.scores) if s >= cfg.score_threshold]
            ktp = sum(kept)
            kfp = len(kept) - ktp
            precision = ktp / (ktp + kfp) if kept else 0.0
            recall = ktp / len(gts) if gts else 0.0
    ap50 = aps[0.50]
    ap50_95 = sum(aps.values()) / len(aps)
    return ClassResult(cid, precision, recall, ap50, ap50_95, counts)


def evaluate(
    dets: Iterable[Detection], gts: Iterable[GroundTruthBox], cfg: EvalConfig
) -> EvalResult:
    """Full evaluation: exclusion, per-class matching, AP and mAP aggregates."""
    excluded = cfg.excluded_class_ids
    dets = [d for d in dets if d.class_id not in excluded]
    gts = [g for g in gts if g.class_id not in excluded]
    class_ids = sorted({d.class_id for d in dets} | {g.class_id for g in gts})
    if not class_ids:
        raise ValueError("no classes left to evaluate after exclusion")
    dets_by_class: dict[int, list[Detection]] = {cid: [] for cid in class_ids}
    gts_by_class: dict[int, list[GroundTruthBox]] = {cid: [] for cid in class_ids}
    for d in dets:
        dets_by_class[d.class_id].append(d)
    for g in gts:
        gts_by_class[g.class_id].append(g)

    workers = max_threads()
    if workers > 1 and len(class_ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                cid: pool.submit(_eval_class, cid, dets_by_class[cid], gts_by_class[cid], cfg)
                for cid in class_ids
            }
            per_class = {cid: futures[cid].result() for cid in class_ids}
    else:
        per_class = {cid: _eval_class(cid, dets_by_class[cid], gts_by_class[cid], cfg) for cid in class_ids}

    map50 = sum(per_class[cid].ap50 for cid in class_ids) / len(class_ids)
    map50_95 = sum(per_class[cid].ap50_95 for cid in class_ids) / len(class_ids)
    return EvalResult(per_class, map50, map50_95, class_ids)


def max_threads() -> int:
    """Parallelism cap from DISTILLKIT_THREADS (default 1: serial)."""
    raw = os.environ.get("DISTILLKIT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# Normative JSON-lines input formats.
# ---------------------------------------------------------------------------

def _parse_box(record: dict, line_no: int) -> Box:
    bbox = record.get("bbox")
    if not (isinstance(bbox, list) and len(bbox) == 4):
        raise ValueError(f"line {line_no}: bbox must be a [x, y, w, h] list")
    return Box(*(float(v) for v in bbox))


def _iter_records(text: str):
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {line_no}: invalid JSON ({exc.msg})") from None
        if not isinstance(record, dict):
            raise ValueError(f"line {line_no}: expected a JSON object")
        yield line_no, record


def parse_detections_jsonl(text: str) -> list[Detection]:
    out = []
    for line_no, record in _iter_records(text):
        try:
            out.append(
                Detection(
                    image_id=str(record["image_id"]),
                    class_id=int(record["class_id"]),
                    box=_parse_box(record, line_no),
                    score=float(record["score"]),
                )
            )
        except KeyError as exc:
            raise ValueError(f"line {line_no}: missing field {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ValueError(f"line {line_no}: {exc}") from None
    return out


def parse_ground_truth_jsonl(text: str) -> list[GroundTruthBox]:
    out = []
    for line_no, record in _iter_records(text):
        try:
            out.append(
                GroundTruthBox(
                    image_id=str(record["image_id"]),
                    class_id=int(record["class_id"]),
                    box=_parse_box(record, line_no),
                )
            )
        except KeyError as exc:
            raise ValueError(f"line {line_no}: missing field {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ValueError(f"line {line_no}: {exc}") from None
    return out
