"""Turn one video's model outputs into scored, class-labelled segments."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .evaluation import tiou

SNIPPET_FRAMES = 16


def _default_thresholds() -> list[float]:
    return [round(0.05 + 0.06 * i, 2) for i in range(16)]  # 0.05 .. 0.95


@dataclass
class InferenceConfig:
    video_score_threshold: float = 0.2
    actionness_thresholds: list = field(default_factory=_default_thresholds)
    nms_iou: float = 0.7
    oic_inflation: float = 0.25
    topk_divisor: int = 8
    fps: float = 25.0

    def __post_init__(self):
        th = list(self.actionness_thresholds)
        if not th or any(not 0 < t < 1 for t in th) or any(b <= a for a, b in zip(th, th[1:])):
            raise ValueError("actionness thresholds must be strictly increasing values in (0, 1)")
        if not 0 < self.video_score_threshold < 1:
            raise ValueError("video_score_threshold must lie in (0, 1)")
        if self.fps <= 0:
            raise ValueError("fps must be positive")

    @property
    def snippet_seconds(self) -> float:
        return SNIPPET_FRAMES / self.fps

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Proposal:
    t_start: float
    t_end: float
    psi: float
    class_id: int
    video_id: str = ""

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError(f"proposal needs t_end > t_start, got [{self.t_start}, {self.t_end}]")


def _array(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def video_class_scores(s_final_supp, k: int) -> np.ndarray:
    """Top-k mean of each class column, softmaxed over classes."""
    s = _array(s_final_supp)
    v = np.mean(-np.sort(-s, axis=0)[:k], axis=0)
    e = np.exp(v - v.max())
    return e / e.sum()


def select_classes(s_final_supp, k: int, threshold: float = 0.2) -> list[int]:
    """Foreground classes whose video-level score reaches ``threshold``."""
    p = video_class_scores(s_final_supp, k)
    return [j for j in range(len(p) - 1) if p[j] >= threshold]


def generate_segments(a_ness, thresholds) -> list[tuple[int, int]]:
    """Maximal runs of snippets with action-ness >= each threshold, pooled."""
    a = _array(a_ness)
    segments = []
    for theta in thresholds:
        keep = np.concatenate([[False], a >= theta, [False]])
        edges = np.flatnonzero(keep[1:] != keep[:-1])
        for start, stop in zip(edges[::2], edges[1::2]):
            segments.append((int(start), int(stop) - 1))
    return segments


def score_proposal(s_final_supp, segment, class_id: int, inflation: float = 0.25) -> float:
    """Outer-inner contrast: mean inside the segment minus mean of its margins.

    Each margin is ``max(1, ceil(inflation * length))`` snippets wide and is
    clipped at the video boundaries.
    """
    scores = _array(s_final_supp)[:, class_id]
    i, j = segment
    T = len(scores)
    inner = float(scores[i:j + 1].mean())
    m = max(1, math.ceil(inflation * (j - i + 1)))
    outer_idx = list(range(max(0, i - m), i)) + list(range(j + 1, min(T, j + 1 + m)))
    outer = float(scores[outer_idx].mean()) if outer_idx else 0.0
    return inner - outer


def nms(proposals, iou_threshold: float = 0.7) -> list[Proposal]:
    """Greedy suppression in (score desc, start asc, end asc) order."""
    ranked = sorted(proposals, key=lambda p: (-p.psi, p.t_start, p.t_end))
    kept: list[Proposal] = []
    for p in ranked:
        if all(tiou((p.t_start, p.t_end), (q.t_start, q.t_end)) <= iou_threshold for q in kept):
            kept.append(p)
    return kept


def localize(outputs, cfg: InferenceConfig, video_id: str = "", fps: float | None = None) -> list[Proposal]:
    """Proposals for one video from eval-mode outputs (unbatched).

    Result is grouped by class id, each group sorted by descending score.
    """
    s_supp = _array(outputs.s_final_supp)
    a_ness = _array(outputs.a_ness)
    T = s_supp.shape[0]
    k = max(1, T // cfg.topk_divisor)
    classes = select_classes(s_supp, k, cfg.video_score_threshold)
    if not classes:
        return []
    seconds = SNIPPET_FRAMES / (fps or cfg.fps)
    segments = sorted(set(generate_segments(a_ness, cfg.actionness_thresholds)))
    result = []
    for c in classes:
        cands = []
        for seg in segments:
            psi = score_proposal(s_supp, seg, c, cfg.oic_inflation)
            if psi > 0:
                cands.append(Proposal(seg[0] * seconds, (seg[1] + 1) * seconds, psi, c, video_id))
        result.extend(nms(cands, cfg.nms_iou))
    return result


# proposal files ---------------------------------------------------------
def _record(p: Proposal, class_names=None) -> dict:
    label = class_names[p.class_id] if class_names else p.class_id
    return {"video_id": p.video_id, "t_start": p.t_start, "t_end": p.t_end, "score": p.psi, "label": label}


def write_proposals_jsonl(path, proposals, class_names=None) -> None:
    from .data import atomic_write_bytes

    text = "".join(json.dumps(_record(p, class_names), sort_keys=True) + "\n" for p in proposals)
    atomic_write_bytes(path, text.encode())


def write_proposals_csv(path, proposals, class_names=None) -> None:
    from .data import atomic_write_bytes

    buf = io.StringIO(newline="")
    writer = csv.DictWriter(buf, fieldnames=["video_id", "t_start", "t_end", "score", "label"])
    writer.writeheader()
    for p in proposals:
        writer.writerow(_record(p, class_names))
    atomic_write_bytes(path, buf.getvalue().encode())


def read_proposals(path, class_names=None) -> list[Proposal]:
    """Read a ``.jsonl`` or ``.csv`` proposal file back into proposals."""
    path = str(path)
    if path.endswith(".csv"):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    else:
        with open(path) as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
    out = []
    for r in rows:
        label = r["label"]
        if class_names and label in class_names:
            cid = class_names.index(label)
        else:
            cid = int(label)
        out.append(Proposal(float(r["t_start"]), float(r["t_end"]), float(r["score"]), cid, str(r["video_id"])))
    return out
