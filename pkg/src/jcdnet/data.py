"""Feature files, manifests, snippet sampling and batch construction.

Feature file layout (little-endian)::

    offset  size  field
    0       4     magic  b"JCDF"
    4       2     version (u16, currently 1)
    6       4     T (u32, number of snippets, >= 1)
    10      4     F2 (u32, feature width = RGB + flow)
    14      T*F2*4 float32 payload, row-major (snippet by snippet)

Manifest (JSON)::

    {
      "classes": ["HighJump", "LongJump", ...],
      "conjoint_sets": [["HighJump", "LongJump"], ...],      # optional
      "videos": [
        {"video_id": "v0001", "feature_path": "features/v0001.jcdf", "fps": 25.0,
         "labels": ["HighJump"],
         "segments": [{"t_start": 3.2, "t_end": 9.6, "class": "HighJump"}]}  # optional
      ]
    }

``feature_path`` is resolved relative to the manifest's directory.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import GroundTruthSegment
from .rng import Xoshiro256

MAGIC = b"JCDF"
VERSION = 1
_HEADER = struct.Struct("<4sHII")


class FeatureFormatError(ValueError):
    """A feature file does not follow the binary layout."""


class FeatureDataError(ValueError):
    """A feature file parses but holds invalid values."""


class ConfigError(ValueError):
    """A dataset or configuration cannot satisfy the request."""


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_features(x) -> bytes:
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise FeatureDataError(f"features must be a non-empty T x F2 matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise FeatureDataError("features contain NaN or Inf")
    header = _HEADER.pack(MAGIC, VERSION, x.shape[0], x.shape[1])
    return header + np.ascontiguousarray(x, dtype="<f4").tobytes()


def write_features(path, x) -> None:
    atomic_write_bytes(path, encode_features(x))


def decode_features(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FeatureFormatError(f"{source}: header truncated at byte {len(buf)} (need {_HEADER.size})")
    magic, version, T, F2 = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FeatureFormatError(f"{source}: bad magic {magic!r} at byte 0, expected {MAGIC!r}")
    if version != VERSION:
        raise FeatureFormatError(f"{source}: unsupported version {version} at byte 4")
    if T == 0:
        raise FeatureFormatError(f"{source}: T=0 at byte 6, a feature file needs at least one snippet")
    if F2 == 0:
        raise FeatureFormatError(f"{source}: F2=0 at byte 10")
    expected = T * F2 * 4
    actual = len(buf) - _HEADER.size
    if actual != expected:
        raise FeatureFormatError(
            f"{source}: payload at byte {_HEADER.size} has {actual} bytes, expected {expected} (T={T}, F2={F2})")
    x = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(T, F2).astype(np.float32)
    bad = np.argwhere(~np.isfinite(x))
    if len(bad):
        t, f = bad[0]
        raise FeatureDataError(
            f"{source}: non-finite value at snippet {t}, dim {f} (byte {_HEADER.size + 4 * (t * F2 + f)})")
    return x


def load_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_features(fh.read(), str(path))


# manifest ---------------------------------------------------------------
@dataclass
class SegmentAnnotation:
    t_start: float
    t_end: float
    label: str


@dataclass
class VideoEntry:
    video_id: str
    feature_path: str
    labels: list
    fps: float = 25.0
    segments: list = field(default_factory=list)


@dataclass
class Manifest:
    classes: list
    videos: list
    conjoint_sets: list | None = None
    root: Path = field(default_factory=Path)

    def validate(self) -> None:
        if len(set(self.classes)) != len(self.classes):
            raise ConfigError("duplicate class names in manifest")
        known = set(self.classes)
        seen = set()
        for v in self.videos:
            if v.video_id in seen:
                raise ConfigError(f"duplicate video_id {v.video_id!r}")
            seen.add(v.video_id)
            if not v.fps > 0:
                raise ConfigError(f"video {v.video_id}: fps must be positive, got {v.fps}")
            unknown = [c for c in v.labels if c not in known]
            unknown += [s.label for s in v.segments if s.label not in known]
            if unknown:
                raise ConfigError(f"video {v.video_id}: unknown classes {sorted(set(unknown))}")
            for s in v.segments:
                if not s.t_end > s.t_start:
                    raise ConfigError(f"video {v.video_id}: segment [{s.t_start}, {s.t_end}] is empty")
        for group in self.conjoint_sets or []:
            unknown = [c for c in group if c not in known]
            if unknown:
                raise ConfigError(f"conjoint set names unknown classes {unknown}")

    def to_dict(self) -> dict:
        doc = {"classes": list(self.classes), "videos": []}
        if self.conjoint_sets:
            doc["conjoint_sets"] = [list(g) for g in self.conjoint_sets]
        for v in self.videos:
            entry = {"video_id": v.video_id, "feature_path": v.feature_path, "fps": v.fps, "labels": list(v.labels)}
            if v.segments:
                entry["segments"] = [{"t_start": s.t_start, "t_end": s.t_end, "class": s.label} for s in v.segments]
            doc["videos"].append(entry)
        return doc

    def ground_truth(self) -> list[GroundTruthSegment]:
        return [GroundTruthSegment(v.video_id, s.t_start, s.t_end, self.classes.index(s.label))
                for v in self.videos for s in v.segments]


def manifest_from_dict(doc: dict, root=".") -> Manifest:
    try:
        videos = [
            VideoEntry(
                video_id=str(v["video_id"]),
                feature_path=str(v["feature_path"]),
                labels=list(v["labels"]),
                fps=float(v.get("fps", 25.0)),
                segments=[SegmentAnnotation(float(s["t_start"]), float(s["t_end"]), s["class"])
                          for s in v.get("segments", [])],
            )
            for v in doc["videos"]
        ]
        manifest = Manifest(list(doc["classes"]), videos, doc.get("conjoint_sets"), Path(root))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed manifest: missing or invalid field {exc}") from exc
    manifest.validate()
    return manifest


def load_manifest(path) -> Manifest:
    path = Path(path)
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return manifest_from_dict(doc, path.parent)


def manifest_bytes(manifest: Manifest) -> bytes:
    return (json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n").encode()


# in-memory dataset ------------------------------------------------------
@dataclass
class VideoRecord:
    video_id: str
    features: np.ndarray
    label: np.ndarray  # multi-hot over C+1 columns; the background column (last) is 0
    fps: float = 25.0
    segments: list = field(default_factory=list)  # GroundTruthSegment, evaluation only

    @property
    def classes(self) -> list[int]:
        return [int(c) for c in np.flatnonzero(self.label[:-1])]


@dataclass
class Dataset:
    classes: list
    videos: list
    conjoint_sets: list | None = None

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def feature_dim(self) -> int:
        return self.videos[0].features.shape[1]

    def ground_truth(self) -> list[GroundTruthSegment]:
        return [g for v in self.videos for g in v.segments]


def load_dataset(manifest: Manifest | str | Path) -> Dataset:
    if not isinstance(manifest, Manifest):
        manifest = load_manifest(manifest)
    C = len(manifest.classes)
    videos = []
    for v in manifest.videos:
        x = load_features(Path(manifest.root) / v.feature_path)
        label = np.zeros(C + 1)
        for c in v.labels:
            label[manifest.classes.index(c)] = 1.0
        segs = [GroundTruthSegment(v.video_id, s.t_start, s.t_end, manifest.classes.index(s.label))
                for s in v.segments]
        videos.append(VideoRecord(v.video_id, x, label, v.fps, segs))
    dims = {r.features.shape[1] for r in videos}
    if len(dims) > 1:
        raise ConfigError(f"videos have different feature widths: {sorted(dims)}")
    return Dataset(list(manifest.classes), videos, manifest.conjoint_sets)


# sampling and batching --------------------------------------------------
def sample_snippets(x: np.ndarray, T_out: int, mode: str, rng: Xoshiro256 | None = None):
    """Return ``(features, index_map)``.

    Training draws one snippet from each of ``T_out`` equal strata of the
    video, so order is preserved; evaluation keeps every snippet.
    """
    T_in = x.shape[0]
    if T_in < 1:
        raise ValueError("cannot sample from an empty sequence")
    if mode == "eval":
        return x, np.arange(T_in)
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    idx = np.empty(T_out, dtype=np.int64)
    for i in range(T_out):
        lo = (i * T_in) // T_out
        hi = ((i + 1) * T_in) // T_out
        idx[i] = min(T_in - 1, lo + rng.integers(max(1, hi - lo)))
    return x[idx], idx


@dataclass
class Batch:
    indices: list  # dataset positions, batch order
    pairs: list  # (batch_pos_m, batch_pos_n, shared_class_ids)


def build_batch(dataset: Dataset, rng: Xoshiro256, batch_size: int = 20, num_pairs: int = 3) -> Batch:
    """``num_pairs`` same-class video pairs plus uniformly drawn fill videos."""
    if 2 * num_pairs > batch_size:
        raise ConfigError(f"{num_pairs} pairs do not fit in a batch of {batch_size}")
    by_class: dict[int, list[int]] = {}
    for i, v in enumerate(dataset.videos):
        for c in v.classes:
            by_class.setdefault(c, []).append(i)
    eligible = sorted(c for c, vids in by_class.items() if len(vids) >= 2)

    used: set[int] = set()
    chosen: list[int] = []
    pairs = []
    for c in rng.permutation(len(eligible)):
        if len(pairs) == num_pairs:
            break
        pool = [i for i in by_class[eligible[c]] if i not in used]
        if len(pool) < 2:
            continue
        m, n = rng.choice(pool, 2)
        used.update((m, n))
        shared = sorted(set(dataset.videos[m].classes) & set(dataset.videos[n].classes))
        pairs.append((len(chosen), len(chosen) + 1, shared))
        chosen.extend((m, n))
    if len(pairs) < num_pairs:
        raise ConfigError(f"dataset cannot supply {num_pairs} disjoint same-class video pairs")

    rest = [i for i in range(len(dataset.videos)) if i not in used]
    n_fill = min(batch_size - len(chosen), len(rest))
    chosen.extend(rng.choice(rest, n_fill))
    return Batch(chosen, pairs)
