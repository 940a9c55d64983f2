"""Temporal IoU, average precision and mAP over IoU thresholds.

Matching follows the ActivityNet detection protocol: detections are visited
in descending score order and each one claims the unmatched ground truth of
the same video with the highest tIoU, provided it reaches the threshold.
AP is the area under the interpolated (monotone envelope) precision-recall
curve.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

THUMOS_GRID = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
ACTIVITYNET_GRID = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

THUMOS14_CLASSES = (
    "BaseballPitch", "BasketballDunk", "Billiards", "CleanAndJerk", "CliffDiving",
    "CricketBowling", "CricketShot", "Diving", "FrisbeeCatch", "GolfSwing",
    "HammerThrow", "HighJump", "JavelinThrow", "LongJump", "PoleVault",
    "Shotput", "SoccerPenalty", "TennisSwing", "ThrowDiscus", "VolleyballSpiking",
)
CONJOINT_SETS = (
    ("BaseballPitch", "CricketBowling"),
    ("HighJump", "LongJump"),
    ("HammerThrow", "Shotput", "ThrowDiscus"),
    ("JavelinThrow", "PoleVault"),
    ("CliffDiving", "Diving"),
)


@dataclass
class GroundTruthSegment:
    video_id: str
    t_start: float
    t_end: float
    class_id: int

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError(f"ground truth segment needs t_end > t_start, got [{self.t_start}, {self.t_end}]")


def tiou(a, b) -> float:
    """Temporal IoU of two ``(start, end)`` segments."""
    a0, a1 = float(a[0]), float(a[1])
    b0, b1 = float(b[0]), float(b[1])
    if a1 <= a0 or b1 <= b0:
        raise ValueError(f"degenerate segment in tiou: {a!r}, {b!r}")
    inter = max(0.0, min(a1, b1) - max(a0, b0))
    union = (a1 - a0) + (b1 - b0) - inter
    return inter / union


def _sort_detections(dets):
    return sorted(dets, key=lambda d: (-d[3], d[1], str(d[0])))


def match_detections(dets, gts, iou_thr: float) -> np.ndarray:
    """True-positive flags for ``dets`` in ranked order.

    ``dets`` are ``(video_id, t_start, t_end, score)`` and ``gts`` are
    ``(video_id, t_start, t_end)``; both for a single class.
    """
    by_video: dict = {}
    for g_idx, g in enumerate(gts):
        by_video.setdefault(g[0], []).append(g_idx)
    used = np.zeros(len(gts), dtype=bool)
    tp = np.zeros(len(dets), dtype=bool)
    for d_idx, d in enumerate(dets):
        candidates = by_video.get(d[0], [])
        best, best_iou = -1, -1.0
        for g_idx in candidates:
            if used[g_idx]:
                continue
            ov = tiou((d[1], d[2]), (gts[g_idx][1], gts[g_idx][2]))
            if ov >= iou_thr and ov > best_iou:
                best, best_iou = g_idx, ov
        if best >= 0:
            used[best] = True
            tp[d_idx] = True
    return tp


def interpolated_ap(precision: np.ndarray, recall: np.ndarray) -> float:
    mprec = np.concatenate([[0.0], precision, [0.0]])
    mrec = np.concatenate([[0.0], recall, [1.0]])
    for i in range(len(mprec) - 2, -1, -1):
        mprec[i] = max(mprec[i], mprec[i + 1])
    idx = np.where(mrec[1:] != mrec[:-1])[0] + 1
    return float(np.sum((mrec[idx] - mrec[idx - 1]) * mprec[idx]))


def average_precision(dets, gts, iou_thr: float) -> float:
    """AP of one class's detections against its ground truths.

    Raises ``ValueError`` when there is no ground truth (AP undefined).
    """
    if not gts:
        raise ValueError("average precision is undefined without ground truth")
    if not dets:
        return 0.0
    ranked = _sort_detections(dets)
    tp = match_detections(ranked, gts, iou_thr)
    tp_cum = np.cumsum(tp)
    precision = tp_cum / np.arange(1, len(ranked) + 1)
    recall = tp_cum / len(gts)
    return interpolated_ap(precision, recall)


@dataclass
class MapReport:
    thresholds: tuple
    per_class: dict  # class_id -> list of AP, aligned with thresholds
    class_names: dict = field(default_factory=dict)

    @property
    def map(self) -> list[float]:
        if not self.per_class:
            return [0.0] * len(self.thresholds)
        aps = np.array(list(self.per_class.values()))
        return [float(v) for v in aps.mean(axis=0)]

    def at(self, thr: float) -> float:
        for t, v in zip(self.thresholds, self.map):
            if abs(t - thr) < 1e-9:
                return v
        raise KeyError(f"threshold {thr} not in report")

    def average(self, lo: float, hi: float) -> float:
        vals = [v for t, v in zip(self.thresholds, self.map) if lo - 1e-9 <= t <= hi + 1e-9]
        if not vals:
            raise KeyError(f"no thresholds in [{lo}, {hi}]")
        return float(np.mean(vals))

    def summary(self) -> dict:
        out = {f"mAP@{t:g}": v for t, v in zip(self.thresholds, self.map)}
        ts = set(round(t, 2) for t in self.thresholds)
        if {0.5, 0.6, 0.7, 0.8, 0.9} <= ts:
            out["AVG(0.5:0.9)"] = self.average(0.5, 0.9)
        if set(THUMOS_GRID) <= ts:
            out["AVG(0.3:0.9)"] = self.average(0.3, 0.9)
        if {0.3, 0.4, 0.5, 0.6, 0.7} <= ts:
            out["AVG(0.3:0.7)"] = self.average(0.3, 0.7)
        if set(ACTIVITYNET_GRID) <= ts:
            out["AVG(0.5:0.95)"] = self.average(0.5, 0.95)
        return out

    def to_json(self) -> str:
        doc = {
            "thresholds": list(self.thresholds),
            "summary": self.summary(),
            "per_class": {self.class_names.get(c, str(c)): aps for c, aps in sorted(self.per_class.items())},
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def format_table(self) -> str:
        summary = self.summary()
        cols = [f"{t:g}" for t in self.thresholds]
        avg_cols = [k for k in ("AVG(0.5:0.9)", "AVG(0.3:0.9)", "AVG(0.5:0.95)") if k in summary]
        header = [f"{c:>6}" for c in cols] + [f"{c[4:-1]:>9}" for c in avg_cols]
        values = [f"{100 * v:6.1f}" for v in self.map] + [f"{100 * summary[c]:9.1f}" for c in avg_cols]
        title = " " * (7 * len(cols) - 8) + "mAP@IoU" + ("     AVG" if avg_cols else "")
        return "\n".join([title, " ".join(header), " ".join(values)])


def map_report(proposals, gts, iou_grid=THUMOS_GRID, activitynet: bool = False, class_names=None) -> MapReport:
    """mAP per IoU threshold over classes that have at least one ground truth.

    ``proposals`` need ``video_id, t_start, t_end, psi, class_id`` attributes
    and ``gts`` are :class:`GroundTruthSegment`.
    """
    if not gts:
        raise ValueError("map_report needs at least one ground-truth segment")
    grid = tuple(iou_grid)
    if activitynet:
        grid = tuple(sorted(set(grid) | set(ACTIVITYNET_GRID)))
    classes = sorted({g.class_id for g in gts})
    per_class = {}
    for c in classes:
        c_gts = [(g.video_id, g.t_start, g.t_end) for g in gts if g.class_id == c]
        c_dets = [(p.video_id, p.t_start, p.t_end, p.psi) for p in proposals if p.class_id == c]
        per_class[c] = [average_precision(c_dets, c_gts, thr) for thr in grid]
    return MapReport(grid, per_class, dict(enumerate(class_names)) if class_names else {})


def conjoint_classes(class_names, conjoint_sets=None) -> list[str]:
    """Class names that belong to a conjoint set, in vocabulary order."""
    if conjoint_sets:
        tagged = {c for group in conjoint_sets for c in group}
        unknown = sorted(tagged - set(class_names))
        if unknown:
            raise ValueError(f"conjoint sets name unknown classes: {', '.join(unknown)}")
        return [c for c in class_names if c in tagged]
    unknown = [c for c in class_names if c not in THUMOS14_CLASSES]
    if unknown:
        raise ValueError(f"not THUMOS14 class names and no conjoint-set tags: {', '.join(unknown)}")
    keep = {c for group in CONJOINT_SETS for c in group}
    return [c for c in class_names if c in keep]


def conjoint_subset_filter(manifest, proposals=None):
    """Restrict a manifest (and optionally proposals) to the conjoint classes.

    Videos without any retained label are dropped, labels and segments of
    other classes are removed and class ids are re-indexed densely in
    vocabulary order.  Returns ``(manifest, proposals)``.
    """
    from dataclasses import replace

    keep = conjoint_classes(manifest.classes, manifest.conjoint_sets)
    keep_set = set(keep)
    videos = []
    for v in manifest.videos:
        labels = [c for c in v.labels if c in keep_set]
        if not labels:
            continue
        segments = [s for s in v.segments if s.label in keep_set]
        videos.append(replace(v, labels=labels, segments=segments))
    sets = None
    if manifest.conjoint_sets:
        sets = [list(g) for g in manifest.conjoint_sets]
    filtered = replace(manifest, classes=keep, videos=videos, conjoint_sets=sets)
    if proposals is None:
        return filtered, None
    remap = {manifest.classes.index(c): i for i, c in enumerate(keep)}
    kept_ids = {v.video_id for v in videos}
    out = [replace(p, class_id=remap[p.class_id]) for p in proposals
           if p.class_id in remap and p.video_id in kept_ids]
    return filtered, out
