"""Evaluation suite: micro Dice, centroid detection F1, panoptic quality.

Conventions shared by all metrics:
  * classes absent from both prediction and ground truth are excluded from
    macro means (and flagged in report metadata) rather than scored 0 or 1;
  * reports carry full float precision; percent rendering is a CLI concern;
  * accumulation over images happens in list order, so reports are
    bit-deterministic regardless of any caller-side parallelism.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import UsageError, ValidationError
from .maps import InstanceMap, LabelMap
from .schemes import get_scheme

_EIGHT = np.ones((3, 3), dtype=int)

__all__ = [
    "label_components",
    "connected_components",
    "centroids",
    "DetectionMatch",
    "match_detections",
    "MetricReport",
    "micro_dice",
    "detection_f1",
    "panoptic_quality",
    "micro_pq",
    "mean_track_score",
]


def label_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connectivity labeling with ids assigned in raster-scan order of each
    component's first pixel, starting at 1. Returns (labels, count)."""
    mask = np.asarray(mask).astype(bool)
    raw, count = ndimage.label(mask, structure=_EIGHT)
    if count == 0:
        return raw.astype(np.int32), 0
    flat = raw.ravel()
    # scipy's ids are not guaranteed raster-ordered; relabel by first pixel.
    first = np.full(count + 1, flat.size, dtype=np.int64)
    nz = np.flatnonzero(flat)
    # reversed so earlier indices win the final write
    first[flat[nz[::-1]]] = nz[::-1]
    order = np.argsort(first[1:], kind="stable")
    perm = np.zeros(count + 1, dtype=np.int32)
    perm[1 + order] = np.arange(1, count + 1, dtype=np.int32)
    return perm[raw], count


def connected_components(binary: np.ndarray) -> InstanceMap:
    """Wrap raster-ordered 8-connectivity labeling as a binary-scheme
    instance map (every component classed as foreground)."""
    labels, count = label_components(binary)
    return InstanceMap(
        scheme_id="binary2",
        ids=labels,
        classes={i: 1 for i in range(1, count + 1)},
    )


def centroids(inst: InstanceMap) -> dict[int, tuple[float, float]]:
    """Unweighted mean (row, col) of each instance's pixels."""
    ids = inst.ids
    if ids.size == 0:
        return {}
    max_id = int(ids.max())
    if max_id == 0:
        return {}
    flat = ids.ravel()
    counts = np.bincount(flat, minlength=max_id + 1)
    rows, cols = np.indices(ids.shape)
    row_sums = np.bincount(flat, weights=rows.ravel(), minlength=max_id + 1)
    col_sums = np.bincount(flat, weights=cols.ravel(), minlength=max_id + 1)
    out: dict[int, tuple[float, float]] = {}
    for i in inst.present_ids():
        out[i] = (row_sums[i] / counts[i], col_sums[i] / counts[i])
    return out


@dataclass(frozen=True)
class DetectionMatch:
    """Greedy centroid matching result for one image pair."""

    pairs: list[tuple[int, int, float]]  # (pred id, gt id, distance)
    tp: dict[int, int]
    fp: dict[int, int]
    fn: dict[int, int]


def match_detections(
    pred: InstanceMap, gt: InstanceMap, radius: float = 15.0
) -> DetectionMatch:
    """Match same-class instances whose centroids lie within ``radius``.

    Candidates are taken greedily in ascending distance; ties break on
    ascending (pred id, gt id). Each instance participates in at most one
    pair.
    """
    if pred.scheme_id != gt.scheme_id:
        raise ValidationError(
            f"detection matching needs a common scheme "
            f"({pred.scheme_id!r} vs {gt.scheme_id!r})"
        )
    scheme = get_scheme(pred.scheme_id)
    pred_cent = centroids(pred)
    gt_cent = centroids(gt)

    candidates: list[tuple[float, int, int]] = []
    for pid, (pr, pc) in pred_cent.items():
        p_cls = pred.classes[pid]
        for gid, (gr, gc) in gt_cent.items():
            if gt.classes[gid] != p_cls:
                continue
            dist = float(np.hypot(pr - gr, pc - gc))
            if dist <= radius:
                candidates.append((dist, pid, gid))
    candidates.sort()

    matched_pred: set[int] = set()
    matched_gt: set[int] = set()
    pairs: list[tuple[int, int, float]] = []
    for dist, pid, gid in candidates:
        if pid in matched_pred or gid in matched_gt:
            continue
        matched_pred.add(pid)
        matched_gt.add(gid)
        pairs.append((pid, gid, dist))

    tp = {c: 0 for c in range(1, scheme.class_count)}
    fp = dict(tp)
    fn = dict(tp)
    for pid, gid, _ in pairs:
        tp[pred.classes[pid]] += 1
    for pid in pred_cent:
        if pid not in matched_pred:
            fp[pred.classes[pid]] += 1
    for gid in gt_cent:
        if gid not in matched_gt:
            fn[gt.classes[gid]] += 1
    return DetectionMatch(pairs=pairs, tp=tp, fp=fp, fn=fn)


@dataclass
class MetricReport:
    """Per-class and aggregate scores plus the counts they came from."""

    metric: str
    per_class: dict[str, float]
    aggregate: float
    counts: dict[str, dict[str, float]] = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "metric": self.metric,
            "per_class": self.per_class,
            "aggregate": self.aggregate,
            "counts": self.counts,
            "params": self.params,
            "metadata": self.metadata,
        }


def _common_scheme(maps: Iterable[LabelMap | InstanceMap]) -> str:
    ids = {m.scheme_id for m in maps}
    if len(ids) != 1:
        raise ValidationError(f"inputs mix schemes: {sorted(ids)}")
    return ids.pop()


def micro_dice(pairs: Sequence[tuple[LabelMap, LabelMap]]) -> MetricReport:
    """Dice per foreground class with all images pooled as one canvas.

    Dice_c = 2 * sum(intersections) / sum(|pred_c| + |gt_c|); classes whose
    denominator is zero are excluded from the mean.
    """
    if not pairs:
        raise UsageError("micro_dice needs at least one (pred, gt) pair")
    scheme_id = _common_scheme([m for pair in pairs for m in pair])
    scheme = get_scheme(scheme_id)
    n = scheme.class_count
    inter = np.zeros(n, dtype=np.int64)
    pred_px = np.zeros(n, dtype=np.int64)
    gt_px = np.zeros(n, dtype=np.int64)
    for pred, gt in pairs:
        if pred.data.shape != gt.data.shape:
            raise ValidationError(
                f"pred/gt shapes differ: {pred.data.shape} vs {gt.data.shape}"
            )
        pred_px += np.bincount(pred.data.ravel(), minlength=n)[:n]
        gt_px += np.bincount(gt.data.ravel(), minlength=n)[:n]
        agree = pred.data == gt.data
        inter += np.bincount(pred.data[agree].ravel(), minlength=n)[:n]

    per_class: dict[str, float] = {}
    counts: dict[str, dict[str, float]] = {}
    excluded: list[str] = []
    for c in scheme.foreground_indices():
        name = scheme.name_of(c)
        denom = int(pred_px[c] + gt_px[c])
        counts[name] = {
            "intersection": int(inter[c]),
            "pred_pixels": int(pred_px[c]),
            "gt_pixels": int(gt_px[c]),
        }
        if denom == 0:
            excluded.append(name)
            continue
        per_class[name] = 2.0 * inter[c] / denom
    aggregate = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return MetricReport(
        metric="micro_dice",
        per_class=per_class,
        aggregate=aggregate,
        counts=counts,
        params={"pooling": "micro", "images": len(pairs)},
        metadata={"excluded_classes": excluded},
    )


def detection_f1(
    pred: Sequence[InstanceMap], gt: Sequence[InstanceMap], radius: float = 15.0
) -> MetricReport:
    """Macro detection F1 with TP/FP/FN counts summed over images.

    A true positive requires same class and centroid distance <= radius.
    """
    if len(pred) != len(gt):
        raise UsageError(
            f"pred and gt lists differ in length ({len(pred)} vs {len(gt)})"
        )
    if not pred:
        raise UsageError("detection_f1 needs at least one image")
    scheme_id = _common_scheme(list(pred) + list(gt))
    scheme = get_scheme(scheme_id)
    tp = {c: 0 for c in range(1, scheme.class_count)}
    fp = dict(tp)
    fn = dict(tp)
    for p, g in zip(pred, gt):
        m = match_detections(p, g, radius=radius)
        for c in tp:
            tp[c] += m.tp[c]
            fp[c] += m.fp[c]
            fn[c] += m.fn[c]

    per_class: dict[str, float] = {}
    counts: dict[str, dict[str, float]] = {}
    excluded: list[str] = []
    for c in range(1, scheme.class_count):
        name = scheme.name_of(c)
        counts[name] = {"tp": tp[c], "fp": fp[c], "fn": fn[c]}
        total = tp[c] + fp[c] + fn[c]
        if total == 0:
            excluded.append(name)
            continue
        per_class[name] = 2.0 * tp[c] / (2.0 * tp[c] + fp[c] + fn[c])
    aggregate = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return MetricReport(
        metric="detection_f1",
        per_class=per_class,
        aggregate=aggregate,
        counts=counts,
        params={"radius": radius, "images": len(pred)},
        metadata={"excluded_classes": excluded, "matching": "greedy_ascending_distance"},
    )


def _instance_stats(
    pred: InstanceMap, gt: InstanceMap, iou_threshold: float
) -> dict[int, dict[str, float]]:
    """Per-class TP / FP / FN / summed matched IoU for one image."""
    scheme = get_scheme(pred.scheme_id)
    stats = {
        c: {"tp": 0, "fp": 0, "fn": 0, "iou_sum": 0.0}
        for c in range(1, scheme.class_count)
    }
    pred_ids = pred.present_ids()
    gt_ids = gt.present_ids()
    pred_area = {i: 0 for i in pred_ids}
    gt_area = {i: 0 for i in gt_ids}
    for i, a in zip(*np.unique(pred.ids, return_counts=True)):
        if i != 0:
            pred_area[int(i)] = int(a)
    for i, a in zip(*np.unique(gt.ids, return_counts=True)):
        if i != 0:
            gt_area[int(i)] = int(a)

    # pairwise overlaps via a joint key over pixels where both maps are nonzero
    both = (pred.ids > 0) & (gt.ids > 0)
    overlaps: dict[tuple[int, int], int] = {}
    if both.any():
        p = pred.ids[both].astype(np.int64)
        g = gt.ids[both].astype(np.int64)
        key = g * (int(pred.ids.max()) + 1) + p
        uniq, cnt = np.unique(key, return_counts=True)
        base = int(pred.ids.max()) + 1
        for k, c in zip(uniq, cnt):
            overlaps[(int(k // base), int(k % base))] = int(c)

    # candidate same-class pairs above the IoU threshold; for thresholds
    # >= 0.5 each instance can appear in at most one such pair, and the
    # greedy pass below then changes nothing
    candidates: list[tuple[float, int, int]] = []
    for (gid, pid), inter in overlaps.items():
        if pred.classes[pid] != gt.classes[gid]:
            continue
        union = pred_area[pid] + gt_area[gid] - inter
        iou = inter / union
        if iou > iou_threshold:
            candidates.append((iou, pid, gid))
    candidates.sort(key=lambda t: (-t[0], t[1], t[2]))

    matched_pred: set[int] = set()
    matched_gt: set[int] = set()
    for iou, pid, gid in candidates:
        if pid in matched_pred or gid in matched_gt:
            continue
        matched_pred.add(pid)
        matched_gt.add(gid)
        cls = pred.classes[pid]
        stats[cls]["tp"] += 1
        stats[cls]["iou_sum"] += iou
    for pid in pred_ids:
        if pid not in matched_pred:
            stats[pred.classes[pid]]["fp"] += 1
    for gid in gt_ids:
        if gid not in matched_gt:
            stats[gt.classes[gid]]["fn"] += 1
    return stats


def _pq_from_stats(s: dict[str, float]) -> float:
    denom = s["tp"] + 0.5 * s["fp"] + 0.5 * s["fn"]
    return s["iou_sum"] / denom if denom > 0 else 0.0


def panoptic_quality(
    pred: Sequence[InstanceMap],
    gt: Sequence[InstanceMap],
    iou_threshold: float = 0.5,
) -> MetricReport:
    """Class-specific PQ: per image, PQ_c = sum(IoU) / (TP + FP/2 + FN/2) over
    same-class matches with IoU > threshold; the class score is the mean over
    images whose ground truth contains the class."""
    if len(pred) != len(gt):
        raise UsageError(
            f"pred and gt lists differ in length ({len(pred)} vs {len(gt)})"
        )
    if not pred:
        raise UsageError("panoptic_quality needs at least one image")
    if not 0.0 <= iou_threshold < 1.0:
        raise ValidationError("iou_threshold must lie in [0, 1)")
    scheme_id = _common_scheme(list(pred) + list(gt))
    scheme = get_scheme(scheme_id)
    per_image: dict[int, list[float]] = {c: [] for c in range(1, scheme.class_count)}
    for p, g in zip(pred, gt):
        stats = _instance_stats(p, g, iou_threshold)
        gt_classes = {g.classes[i] for i in g.present_ids()}
        for c in gt_classes:
            per_image[c].append(_pq_from_stats(stats[c]))

    per_class: dict[str, float] = {}
    counts: dict[str, dict[str, float]] = {}
    excluded: list[str] = []
    for c in range(1, scheme.class_count):
        name = scheme.name_of(c)
        counts[name] = {"images_with_gt": len(per_image[c])}
        if not per_image[c]:
            excluded.append(name)
            continue
        per_class[name] = float(np.mean(per_image[c]))
    aggregate = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return MetricReport(
        metric="panoptic_quality",
        per_class=per_class,
        aggregate=aggregate,
        counts=counts,
        params={"iou_threshold": iou_threshold, "images": len(pred)},
        metadata={
            "excluded_classes": excluded,
            "class_mean_over": "images_with_class_in_gt",
        },
    )


def micro_pq(
    pred: Sequence[InstanceMap],
    gt: Sequence[InstanceMap],
    iou_threshold: float = 0.5,
) -> MetricReport:
    """PQ over the pooled instance population of all images.

    Equivalent to laying every image onto one large canvas with per-image id
    offsets: TP, FP, FN and matched IoUs accumulate over images, then each
    class is scored once.
    """
    if len(pred) != len(gt):
        raise UsageError(
            f"pred and gt lists differ in length ({len(pred)} vs {len(gt)})"
        )
    if not pred:
        raise UsageError("micro_pq needs at least one image")
    if not 0.0 <= iou_threshold < 1.0:
        raise ValidationError("iou_threshold must lie in [0, 1)")
    scheme_id = _common_scheme(list(pred) + list(gt))
    scheme = get_scheme(scheme_id)
    pooled = {
        c: {"tp": 0, "fp": 0, "fn": 0, "iou_sum": 0.0}
        for c in range(1, scheme.class_count)
    }
    for p, g in zip(pred, gt):
        stats = _instance_stats(p, g, iou_threshold)
        for c, s in stats.items():
            for k in pooled[c]:
                pooled[c][k] += s[k]

    per_class: dict[str, float] = {}
    counts: dict[str, dict[str, float]] = {}
    excluded: list[str] = []
    for c in range(1, scheme.class_count):
        name = scheme.name_of(c)
        s = pooled[c]
        counts[name] = {
            "tp": s["tp"],
            "fp": s["fp"],
            "fn": s["fn"],
            "iou_sum": s["iou_sum"],
        }
        if s["tp"] + s["fp"] + s["fn"] == 0:
            excluded.append(name)
            continue
        per_class[name] = _pq_from_stats(s)
    aggregate = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return MetricReport(
        metric="micro_pq",
        per_class=per_class,
        aggregate=aggregate,
        counts=counts,
        params={"iou_threshold": iou_threshold, "images": len(pred), "pooling": "micro"},
        metadata={"excluded_classes": excluded},
    )


def mean_track_score(dice_mean: float, f1_mean: float) -> float:
    """Arithmetic mean of the tissue and nuclei track scores."""
    for name, v in (("dice_mean", dice_mean), ("f1_mean", f1_mean)):
        if not 0.0 <= v <= 1.0:
            raise ValidationError(f"{name} must lie in [0, 1], got {v}")
    return (dice_mean + f1_mean) / 2.0
