"""Per-frame PSNR, compactness distance, abnormality score, AUC and memory-distance statistics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from sklearn.metrics import roc_auc_score

from .memory import nearest_indices

PERFECT_PSNR = math.inf  # zero-error frames; replaced by the video's max before normalizing


@dataclass
class ScoreRecord:
    video_id: str
    frame: int
    psnr: float
    dist: float
    score: float
    label: int


@dataclass
class DistanceSummary:
    dNN: list
    dNA: list
    dAN: list
    dAA: list
    labels: list
    r_normal: float | None = None
    r_abnormal: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _vecs(x):
    return x.vectors if hasattr(x, "vectors") else x


def psnr(pred, target) -> float:
    """10*log10(max(pred) / mse); returns ``PERFECT_PSNR`` for an exact match.

    The numerator is the maximum predicted value, not the squared peak.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    mse = np.mean((pred - target) ** 2)
    if mse == 0.0:
        return PERFECT_PSNR
    peak = pred.max()
    if peak <= 0:
        raise ValueError("PSNR needs a positive maximum predicted value")
    return float(10.0 * np.log10(peak / mse))


def compactness_distance(queries, bank) -> float:
    """Mean squared distance from each query to its most similar memory."""
    q = _vecs(queries).detach().to(torch.float64)
    mem = _vecs(bank).detach().to(torch.float64)
    if q.shape[-1] != mem.shape[-1]:
        raise ValueError("query and memory dimensions differ")
    idx = nearest_indices(q, mem)
    return float(((q - mem[idx]) ** 2).sum(dim=-1).mean())


def minmax_normalize(values) -> np.ndarray:
    """Min-max over one whole video; a constant series maps to zeros."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot normalize an empty series")
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def fill_perfect(psnr_series) -> np.ndarray:
    """Replace perfect-prediction sentinels with the largest finite PSNR of the video."""
    x = np.asarray(psnr_series, dtype=np.float64).copy()
    inf = np.isinf(x)
    if inf.any():
        finite = x[~inf]
        x[inf] = finite.max() if finite.size else 0.0
    return x


def abnormality_score(psnr_series, dist_series, gamma: float = 0.6) -> np.ndarray:
    p = np.asarray(psnr_series, dtype=np.float64)
    d = np.asarray(dist_series, dtype=np.float64)
    if p.shape != d.shape:
        raise ValueError(f"series lengths differ: {p.shape} vs {d.shape}")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    return gamma * (1.0 - minmax_normalize(fill_perfect(p))) + (1.0 - gamma) * minmax_normalize(d)


def score_video(video_id: str, psnr_series, dist_series, labels, gamma: float = 0.6, frames=None):
    s = abnormality_score(psnr_series, dist_series, gamma)
    frames = range(len(s)) if frames is None else frames
    return [
        ScoreRecord(video_id, int(f), float(p), float(d), float(v), int(l))
        for f, p, d, v, l in zip(frames, psnr_series, dist_series, s, labels)
    ]


def frame_auc(scores, labels) -> float:
    labels = np.asarray(labels).astype(int)
    if np.unique(labels).size < 2:
        raise ValueError("AUC needs frames of both labels")
    return float(roc_auc_score(labels, np.asarray(scores, dtype=np.float64)))


def avg_min_distance(queries, bank) -> float:
    """Average over queries of the (non-squared) distance to the closest memory."""
    q = _vecs(queries).detach().to(torch.float64)
    mem = _vecs(bank).detach().to(torch.float64)
    if q.numel() == 0:
        raise ValueError("empty query set")
    return float(torch.cdist(q, mem).min(dim=1).values.mean())


def clip_bank_distances(qN, qA, bankN, bankA) -> tuple[float, float, float, float]:
    """(d(U^N,M^N), d(U^N,M^A), d(U^A,M^N), d(U^A,M^A)) for one clip."""
    return (
        avg_min_distance(qN, bankN),
        avg_min_distance(qN, bankA),
        avg_min_distance(qA, bankN),
        avg_min_distance(qA, bankA),
    )


def distance_ratios(dNN, dNA, dAN, dAA) -> tuple[float, float]:
    """Own-bank over cross-bank distance sums, for each query head."""
    den_n, den_a = float(np.sum(dNA)), float(np.sum(dAN))
    if den_n <= 0 or den_a <= 0:
        raise ValueError("distance ratio denominator is zero")
    return float(np.sum(dNN)) / den_n, float(np.sum(dAA)) / den_a
