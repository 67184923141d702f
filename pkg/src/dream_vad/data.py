"""Synthetic surveillance-style videos, clip windows and the imbalanced split protocols.

Normal videos show small squares drifting slowly over a fixed textured scene.
Abnormal videos contain segments where one object turns into a disc and/or
moves at several times the normal speed; those frames are labeled abnormal.

Frames are rendered as uint8 and mapped to [-1, 1] with ``x / 127.5 - 1`` so
that writing to PNG and loading back is lossless.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

DATASET_FORMAT_VERSION = 1
RATE_GRID = (0.01, 0.05, 0.10, 0.15, 0.20, 0.25)


class DataError(ValueError):
    """Input data cannot satisfy the requested operation."""


@dataclass
class SynthConfig:
    frame_size: int = 64
    channels: int = 3
    n_normal: int = 20
    n_abnormal: int = 4
    n_normal_test: int = 0
    normal_length: int = 24
    abnormal_length: int = 48
    objects: int = 2
    object_size: int = 8
    speed: float = 1.0  # pixels per frame
    fast_factor: float = 3.5
    anomaly: str = "both"  # shape | speed | both | mixed (cycles the three by video)
    segment_length: int = 24
    noise: float = 3.0  # std of per-frame sensor noise, in uint8 units

    def __post_init__(self):
        if self.object_size >= self.frame_size:
            raise DataError("object does not fit inside the frame")
        if self.fast_factor < 3:
            raise DataError("abnormal speed must be at least three times the normal speed")
        if self.anomaly not in ("shape", "speed", "both", "mixed"):
            raise DataError(f"unknown anomaly kind {self.anomaly!r}")
        if self.segment_length >= self.abnormal_length:
            raise DataError("abnormal segment must be shorter than the video")


@dataclass
class VideoSequence:
    id: str
    pixels: np.ndarray  # (N, ch, H, W) uint8
    labels: np.ndarray  # (N,) 0 normal, 1 abnormal
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) != len(self.pixels):
            raise DataError(f"{self.id}: {len(self.labels)} labels for {len(self.pixels)} frames")

    def __len__(self) -> int:
        return len(self.pixels)

    @property
    def frames(self) -> np.ndarray:
        return to_unit_range(self.pixels)


def to_unit_range(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


@dataclass
class Dataset:
    normal_train: list
    abnormal: list
    normal_test: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def videos(self) -> dict:
        return {v.id: v for v in self.normal_train + self.abnormal + self.normal_test}


# ---------------------------------------------------------------- generation


def _background(rng, size: int, channels: int) -> np.ndarray:
    coarse = rng.uniform(50, 120, size=(channels, 8, 8))
    img = np.stack(
        [np.asarray(Image.fromarray(c.astype(np.float32), mode="F").resize((size, size), Image.BILINEAR)) for c in coarse]
    )
    return img


def _draw(frame: np.ndarray, x: float, y: float, s: int, color: np.ndarray, disc: bool) -> None:
    h, w = frame.shape[1:]
    if disc:
        r = s / math.sqrt(math.pi)  # same area as the square
        cx, cy = x + s / 2, y + s / 2
        yy, xx = np.mgrid[0:h, 0:w]
        mask = (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= r * r
    else:
        mask = np.zeros((h, w), dtype=bool)
        x0, y0 = int(round(x)), int(round(y))
        mask[max(y0, 0) : y0 + s, max(x0, 0) : x0 + s] = True
    frame[:, mask] = color[:, None]


def _render(cfg: SynthConfig, rng, bg, length: int, segment=None, kind: str = "both") -> tuple[np.ndarray, np.ndarray]:
    size, s = cfg.frame_size, cfg.object_size
    objs = []
    for _ in range(cfg.objects):
        angle = rng.uniform(0, 2 * math.pi)
        objs.append(
            {
                "x": rng.uniform(0, size - s),
                "y": rng.uniform(0, size - s),
                "dir": np.array([math.cos(angle), math.sin(angle)]),
                "color": rng.uniform(190, 250, size=cfg.channels),
            }
        )
    pixels = np.empty((length, cfg.channels, size, size), dtype=np.uint8)
    labels = np.zeros(length, dtype=np.int64)
    for t in range(length):
        abnormal = segment is not None and segment[0] <= t < segment[1]
        labels[t] = int(abnormal)
        # move before drawing so a frame's label matches the motion it shows
        for i, o in enumerate(objs if t else ()):
            odd = abnormal and i == 0 and kind in ("speed", "both")
            v = cfg.speed * (cfg.fast_factor if odd else 1.0)
            for axis, key in enumerate(("x", "y")):
                nxt = o[key] + v * o["dir"][axis]
                if nxt < 0 or nxt > size - s:
                    o["dir"][axis] *= -1
                    nxt = min(max(nxt, 0.0), size - s)
                o[key] = nxt
        frame = bg.copy()
        for i, o in enumerate(objs):
            odd = abnormal and i == 0
            _draw(frame, o["x"], o["y"], s, o["color"], disc=odd and kind in ("shape", "both"))
        frame += rng.normal(0.0, cfg.noise, size=frame.shape)
        pixels[t] = np.clip(np.rint(frame), 0, 255).astype(np.uint8)
    return pixels, labels


def synth_generate(cfg: SynthConfig, seed: int) -> Dataset:
    """Deterministic synthetic dataset for ``(cfg, seed)``."""
    rng = np.random.default_rng(seed)
    bg = _background(rng, cfg.frame_size, cfg.channels)
    kinds = ("shape", "speed", "both")

    def normal(prefix, i):
        px, lb = _render(cfg, rng, bg, cfg.normal_length)
        return VideoSequence(f"{prefix}{i:03d}", px, lb, {"scenario": "normal", "speed": cfg.speed})

    normal_train = [normal("train_", i) for i in range(cfg.n_normal)]
    abnormal = []
    for i in range(cfg.n_abnormal):
        kind = kinds[i % 3] if cfg.anomaly == "mixed" else cfg.anomaly
        # keep a few normal frames ahead of the segment for clip context
        lead = min(4, cfg.abnormal_length - cfg.segment_length)
        start = int(rng.integers(lead, cfg.abnormal_length - cfg.segment_length + 1))
        seg = (start, start + cfg.segment_length)
        px, lb = _render(cfg, rng, bg, cfg.abnormal_length, seg, kind)
        meta = {"scenario": kind, "segment": list(seg), "speed": cfg.speed, "fast_speed": cfg.speed * cfg.fast_factor}
        abnormal.append(VideoSequence(f"abnormal_{i:03d}", px, lb, meta))
    normal_test = [normal("test_", i) for i in range(cfg.n_normal_test)]
    return Dataset(normal_train, abnormal, normal_test, {"seed": seed, "config": asdict(cfg)})


# ---------------------------------------------------------------- clips


@dataclass
class ClipSample:
    video_id: str
    index: int  # frame index of the target
    inputs: np.ndarray  # (T, ch, H, W) in [-1, 1]
    target: np.ndarray  # (ch, H, W)
    label: int


def clip_targets(video: VideoSequence, T: int = 4) -> range:
    if len(video) < T + 1:
        raise DataError(f"{video.id}: {len(video)} frames is too short for T={T}")
    return range(T, len(video))


def make_clips(video: VideoSequence, T: int = 4) -> list[ClipSample]:
    frames = video.frames
    return [
        ClipSample(video.id, t, frames[t - T : t], frames[t], int(video.labels[t])) for t in clip_targets(video, T)
    ]


class ClipSet(dict):
    """video_id -> sorted list of target frame indices."""

    def add(self, video_id: str, targets) -> None:
        cur = set(self.get(video_id, ()))
        cur.update(int(t) for t in targets)
        self[video_id] = sorted(cur)

    def refs(self) -> list[tuple[str, int]]:
        return [(v, t) for v in sorted(self) for t in self[v]]

    def __len__(self) -> int:  # number of clips, not videos
        return sum(len(t) for t in self.values())

    def count_label(self, videos: dict, label: int) -> int:
        return sum(int(videos[v].labels[t] == label) for v, t in self.refs())

    def to_json(self) -> list:
        out = []
        for vid in sorted(self):
            ts = self[vid]
            ranges, start, prev = [], None, None
            for t in ts:
                if start is None:
                    start = prev = t
                elif t == prev + 1:
                    prev = t
                else:
                    ranges.append([start, prev + 1])
                    start = prev = t
            if start is not None:
                ranges.append([start, prev + 1])
            out.append({"video_id": vid, "frames": ranges})
        return out

    @classmethod
    def from_json(cls, items: list) -> "ClipSet":
        cs = cls()
        for item in items:
            cs.add(item["video_id"], [t for a, b in item["frames"] for t in range(a, b)])
        return cs


# ---------------------------------------------------------------- splits


def _all_clips(out: ClipSet, videos, T: int) -> None:
    for v in videos:
        out.add(v.id, clip_targets(v, T))


def kfold_split(normal_train, abnormal_all, K: int = 10, fold: int = 0, T: int = 4, normal_test=()):
    """Inject one of K abnormal folds into training; the other folds are tested.

    Injected videos contribute all of their clips: frames labeled abnormal as
    abnormal training data, the surrounding frames as normal training data.
    """
    if K < 2:
        raise DataError("K-fold needs K >= 2")
    if not 0 <= fold < K:
        raise DataError(f"fold {fold} outside [0, {K})")
    if len(abnormal_all) < K:
        raise DataError(f"{len(abnormal_all)} abnormal videos cannot fill {K} folds")
    folds = np.array_split(np.arange(len(abnormal_all)), K)
    chosen = set(folds[fold].tolist())
    train, test = ClipSet(), ClipSet()
    _all_clips(train, normal_train, T)
    _all_clips(train, [v for i, v in enumerate(abnormal_all) if i in chosen], T)
    _all_clips(test, [v for i, v in enumerate(abnormal_all) if i not in chosen], T)
    _all_clips(test, normal_test, T)
    return train, test


def abnormal_count_for_rate(n_normal: int, rate: float) -> int:
    """Abnormal clip count giving abnormal / (abnormal + normal) ~= rate."""
    if not 0 < rate < 1:
        raise DataError("abnormal rate must lie in (0, 1)")
    # small epsilon so rates like 0.1 are not floored away by float error
    return max(1, math.floor(rate * n_normal / (1 - rate) + 1e-9))


def rate_split(normal_train, abnormal_all, rate: float, seed: int = 0, T: int = 4, normal_test=()):
    """Reserve half the abnormal videos for test; draw training anomalies from the rest.

    Only clips whose target frame is abnormal are drawn from the pool.
    """
    if len(abnormal_all) < 2:
        raise DataError("rate split needs at least two abnormal videos")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(abnormal_all))
    n_test = len(abnormal_all) // 2
    test_videos = [abnormal_all[i] for i in sorted(order[:n_test])]
    pool_videos = [abnormal_all[i] for i in sorted(order[n_test:])]

    train, test = ClipSet(), ClipSet()
    _all_clips(train, normal_train, T)
    n_normal = len(train)
    pool = [(v.id, t) for v in pool_videos for t in clip_targets(v, T) if v.labels[t] == 1]
    need = abnormal_count_for_rate(n_normal, rate)
    if need > len(pool):
        raise DataError(f"rate {rate} needs {need} abnormal clips but the pool holds {len(pool)}")
    for i in sorted(rng.choice(len(pool), size=need, replace=False)):
        vid, t = pool[i]
        train.add(vid, [t])
    _all_clips(test, test_videos, T)
    _all_clips(test, normal_test, T)
    return train, test


def save_split(path, train: ClipSet, test: ClipSet, spec: dict) -> None:
    doc = {"format_version": DATASET_FORMAT_VERSION, "split": spec, "train": train.to_json(), "test": test.to_json()}
    Path(path).write_text(json.dumps(doc, indent=2))


def load_split(path) -> tuple[ClipSet, ClipSet, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != DATASET_FORMAT_VERSION:
        raise DataError(f"unsupported split format version {doc.get('format_version')}")
    return ClipSet.from_json(doc["train"]), ClipSet.from_json(doc["test"]), doc.get("split", {})


# ---------------------------------------------------------------- disk layout


def save_dataset(ds: Dataset, root) -> None:
    """One directory per video with numbered PNG frames and a manifest.json."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    index = {"format_version": DATASET_FORMAT_VERSION, "meta": ds.meta, "videos": []}
    for role, vids in (("normal_train", ds.normal_train), ("abnormal", ds.abnormal), ("normal_test", ds.normal_test)):
        for v in vids:
            d = root / v.id
            d.mkdir(exist_ok=True)
            for i, px in enumerate(v.pixels):
                img = px[0] if px.shape[0] == 1 else np.moveaxis(px, 0, -1)
                Image.fromarray(img).save(d / f"{i:06d}.png")
            manifest = {
                "id": v.id,
                "role": role,
                "num_frames": len(v),
                "labels": v.labels.tolist(),
                "scenario": v.meta,
                "seed": ds.meta.get("seed"),
            }
            (d / "manifest.json").write_text(json.dumps(manifest, indent=2))
            index["videos"].append({"id": v.id, "role": role})
    (root / "dataset.json").write_text(json.dumps(index, indent=2))


def load_video(d) -> tuple[VideoSequence, str]:
    d = Path(d)
    manifest = json.loads((d / "manifest.json").read_text())
    frames = []
    for i in range(manifest["num_frames"]):
        path = d / f"{i:06d}.png"
        if not path.exists():
            raise DataError(f"missing frame {path}")
        arr = np.asarray(Image.open(path))
        frames.append(arr[None] if arr.ndim == 2 else np.moveaxis(arr, -1, 0))
    v = VideoSequence(manifest["id"], np.stack(frames).astype(np.uint8), manifest["labels"], manifest.get("scenario", {}))
    return v, manifest.get("role", "normal_train")


def load_dataset(root) -> Dataset:
    root = Path(root)
    index_path = root / "dataset.json"
    if not index_path.exists():
        raise DataError(f"{root} has no dataset.json")
    index = json.loads(index_path.read_text())
    if index.get("format_version") != DATASET_FORMAT_VERSION:
        raise DataError(f"unsupported dataset format version {index.get('format_version')}")
    ds = Dataset([], [], [], index.get("meta", {}))
    for entry in index["videos"]:
        v, role = load_video(root / entry["id"])
        getattr(ds, role).append(v)
    return ds
