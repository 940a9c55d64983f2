"""Synthetic conjoint-action datasets.

Classes come in conjoint sets.  Every class in a set shares one "common
phase" prototype and owns a distinct "definite phase" prototype; an action
instance is a run of common-phase snippets followed by a run of
definite-phase snippets, and its ground-truth segment covers both.  The rest
of the video is background: one shared background direction, perturbed per
video by ``background_spread``.  Short definite phases behind long common
phases are what make the classes hard to tell apart from video labels alone.

Generation order (everything drawn from one ``Xoshiro256(seed)``):

1. common prototypes (one per set, in set order), then definite prototypes
   (one per class, in class order): each is a normalized standard-normal
   vector, redrawn until its |cosine| with every earlier prototype is below
   ``max_cosine``; the accepted direction is scaled to norm ``sqrt(dim)``.
2. the shared background direction (same rejection rule).
3. for each video ``i``: class ``i mod C``; background prototype (shared
   direction plus ``background_spread`` times a standard normal over
   ``sqrt(dim)``, normalized, redrawn while too close to an action
   prototype); instance count; for each instance its common and definite
   lengths; the gap composition; then one ``T x dim`` standard-normal noise
   matrix scaled row-wise by ``background_std`` or ``noise_std``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    ConfigError, Dataset, Manifest, SegmentAnnotation, VideoEntry, VideoRecord,
    atomic_write_bytes, encode_features, manifest_bytes,
)
from .evaluation import GroundTruthSegment
from .inference import SNIPPET_FRAMES
from .rng import Xoshiro256

BACKGROUND, COMMON, DEFINITE = -1, 0, 1


def _default_sets() -> list:
    return [["set0_a", "set0_b"], ["set1_a", "set1_b"]]


@dataclass
class SynthConfig:
    conjoint_sets: list = field(default_factory=_default_sets)
    feature_dim: int = 64
    snippets_per_video: int = 60
    num_videos: int = 200
    actions_per_video: tuple = (1, 2)
    common_length: tuple = (5, 9)
    definite_length: tuple = (2, 3)
    noise_std: float = 1.5
    background_std: float = 1.5
    background_spread: float = 0.5
    max_cosine: float = 0.5
    fps: float = 25.0
    seed: int = 0

    def __post_init__(self):
        self.actions_per_video = tuple(self.actions_per_video)
        self.common_length = tuple(self.common_length)
        self.definite_length = tuple(self.definite_length)
        names = [c for g in self.conjoint_sets for c in g]
        if not names or any(len(g) < 1 for g in self.conjoint_sets):
            raise ConfigError("conjoint_sets must list at least one class")
        if len(set(names)) != len(names):
            raise ConfigError("a class appears in more than one conjoint set")
        if self.feature_dim < 2:
            raise ConfigError(f"feature_dim must be >= 2, got {self.feature_dim}")
        if self.num_videos < 1:
            raise ConfigError("num_videos must be >= 1")
        for name in ("actions_per_video", "common_length", "definite_length"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ConfigError(f"{name} must be a range with 1 <= lo <= hi, got {(lo, hi)}")
        longest = self.common_length[1] + self.definite_length[1]
        if self.snippets_per_video < longest:
            raise ConfigError(f"snippets_per_video={self.snippets_per_video} cannot hold an action of {longest}")
        if self.noise_std < 0 or self.background_std < 0:
            raise ConfigError("noise levels must be >= 0")
        if self.background_spread < 0:
            raise ConfigError("background_spread must be >= 0")
        if not 0 < self.max_cosine <= 1:
            raise ConfigError("max_cosine must lie in (0, 1]")
        if self.fps <= 0:
            raise ConfigError("fps must be positive")

    @property
    def classes(self) -> list:
        return [c for g in self.conjoint_sets for c in g]

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("actions_per_video", "common_length", "definite_length"):
            d[name] = list(d[name])
        return d


@dataclass
class SynthResult:
    dataset: Dataset
    common_prototypes: np.ndarray  # one row per conjoint set
    definite_prototypes: np.ndarray  # one row per class
    phases: list  # per video, snippet phase codes (BACKGROUND / COMMON / DEFINITE)
    snippet_classes: list  # per video, class id per snippet (-1 on background)


def _draw_direction(rng: Xoshiro256, dim: int, accepted: list, max_cosine: float) -> np.ndarray:
    for _ in range(1000):
        v = rng.normal(dim)
        norm = np.linalg.norm(v)
        if norm == 0:
            continue
        v = v / norm
        if all(abs(float(v @ a)) < max_cosine for a in accepted):
            return v
    raise ConfigError(f"could not draw a prototype with |cos| < {max_cosine} in 1000 tries; "
                      f"feature_dim={dim} is too small")


def _video_background(rng: Xoshiro256, shared: np.ndarray, directions: list, cfg: SynthConfig) -> np.ndarray:
    # shared direction plus a per-video offset, still kept away from every action prototype
    for _ in range(1000):
        v = shared + cfg.background_spread * rng.normal(len(shared)) / np.sqrt(len(shared))
        v = v / np.linalg.norm(v)
        if all(abs(float(v @ a)) < cfg.max_cosine for a in directions):
            return v
    raise ConfigError("could not draw a background prototype away from the action prototypes")


def synth_generate(cfg: SynthConfig) -> SynthResult:
    rng = Xoshiro256(cfg.seed)
    dim, T = cfg.feature_dim, cfg.snippets_per_video
    scale = np.sqrt(dim)
    classes = cfg.classes
    C = len(classes)
    set_of = {c: s for s, g in enumerate(cfg.conjoint_sets) for c in g}

    directions: list[np.ndarray] = []
    for _ in cfg.conjoint_sets:
        directions.append(_draw_direction(rng, dim, directions, cfg.max_cosine))
    for _ in classes:
        directions.append(_draw_direction(rng, dim, directions, cfg.max_cosine))
    shared_background = _draw_direction(rng, dim, directions, cfg.max_cosine)
    common = np.array(directions[:len(cfg.conjoint_sets)]) * scale
    definite = np.array(directions[len(cfg.conjoint_sets):]) * scale

    seconds = SNIPPET_FRAMES / cfg.fps
    videos, phases, snippet_classes = [], [], []
    for i in range(cfg.num_videos):
        c = i % C
        background = _video_background(rng, shared_background, directions, cfg) * scale
        n = rng.integer_range(*cfg.actions_per_video)
        lengths = []
        for _ in range(n):
            lengths.append((rng.integer_range(*cfg.common_length), rng.integer_range(*cfg.definite_length)))
        while sum(a + b for a, b in lengths) + len(lengths) - 1 > T:
            lengths.pop()
        n = len(lengths)
        free = T - sum(a + b for a, b in lengths) - (n - 1)
        cuts = sorted(rng.integers(free + 1) for _ in range(n))
        gaps = np.diff([0] + cuts + [free])

        phase = np.full(T, BACKGROUND)
        owner = np.full(T, -1)
        rows = np.tile(background, (T, 1))
        segments = []
        pos = int(gaps[0])
        for j, (lc, ld) in enumerate(lengths):
            start = pos
            phase[pos:pos + lc] = COMMON
            rows[pos:pos + lc] = common[set_of[classes[c]]]
            pos += lc
            phase[pos:pos + ld] = DEFINITE
            rows[pos:pos + ld] = definite[c]
            pos += ld
            owner[start:pos] = c
            segments.append(GroundTruthSegment(f"synth_{i:04d}", start * seconds, pos * seconds, c))
            pos += 1 + int(gaps[j + 1])
        std = np.where(phase == BACKGROUND, cfg.background_std, cfg.noise_std)
        x = (rows + rng.normal((T, dim)) * std[:, None]).astype(np.float32)
        label = np.zeros(C + 1)
        label[c] = 1.0
        videos.append(VideoRecord(f"synth_{i:04d}", x, label, cfg.fps, segments))
        phases.append(phase)
        snippet_classes.append(owner)
    dataset = Dataset(classes, videos, [list(g) for g in cfg.conjoint_sets])
    return SynthResult(dataset, common, definite, phases, snippet_classes)


def dataset_manifest(dataset: Dataset, feature_dir: str = "features") -> Manifest:
    entries = []
    for v in dataset.videos:
        entries.append(VideoEntry(
            video_id=v.video_id,
            feature_path=f"{feature_dir}/{v.video_id}.jcdf",
            labels=[dataset.classes[c] for c in v.classes],
            fps=v.fps,
            segments=[SegmentAnnotation(g.t_start, g.t_end, dataset.classes[g.class_id]) for g in v.segments],
        ))
    return Manifest(list(dataset.classes), entries, dataset.conjoint_sets)


def write_dataset(dataset: Dataset, out_dir, holdout: int = 0) -> Path:
    """Write feature files plus ``manifest.json``; returns the manifest path.

    With ``holdout > 0`` the last ``holdout`` videos also get their own
    ``manifest_test.json`` and the rest ``manifest_train.json``.  Everything
    is encoded in memory first so a bad record leaves no files.
    """
    out_dir = Path(out_dir)
    if not 0 <= holdout < len(dataset.videos):
        raise ConfigError(f"holdout must lie in [0, {len(dataset.videos)}), got {holdout}")
    manifest = dataset_manifest(dataset)
    blobs = [(out_dir / e.feature_path, encode_features(v.features)) for e, v in zip(manifest.videos, dataset.videos)]
    blobs.append((out_dir / "manifest.json", manifest_bytes(manifest)))
    if holdout:
        cut = len(manifest.videos) - holdout
        for name, videos in (("manifest_train.json", manifest.videos[:cut]), ("manifest_test.json", manifest.videos[cut:])):
            part = Manifest(manifest.classes, videos, manifest.conjoint_sets)
            blobs.append((out_dir / name, manifest_bytes(part)))
    for path, blob in blobs:
        atomic_write_bytes(path, blob)
    return out_dir / "manifest.json"
