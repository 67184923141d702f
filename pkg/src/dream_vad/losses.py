"""Triplet, reconstruction, compactness, separateness and the weighted total.

Per-sample terms are sums as written (over pixels, over queries, over
anchors). The batch-level bundle divides every component by the batch size.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import torch

from .memory import Branch, first_argmax, nearest_indices, similarities


def _vecs(x) -> torch.Tensor:
    return x.vectors if hasattr(x, "vectors") else x


def triplet_loss(fa, fp, fn, beta: float = 1.0) -> torch.Tensor:
    """Hinge on squared distances; inputs are (D,) or (N, D), summed over N."""
    if not (fa.shape == fp.shape == fn.shape):
        raise ValueError(f"feature shapes differ: {fa.shape}, {fp.shape}, {fn.shape}")
    if beta < 0:
        raise ValueError("margin must be non-negative")
    d_pos = ((fa - fp) ** 2).sum(dim=-1)
    d_neg = ((fa - fn) ** 2).sum(dim=-1)
    return torch.clamp(d_pos - d_neg + beta, min=0).sum()


def reconstruction_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    return ((target - pred) ** 2).sum()


def _two_nearest(q: torch.Tensor, mem: torch.Tensor):
    if q.shape[-1] != mem.shape[-1]:
        raise ValueError(f"query dim {q.shape[-1]} != memory dim {mem.shape[-1]}")
    mem = mem.detach().to(q.dtype)
    d2 = ((q.unsqueeze(-2) - mem) ** 2).sum(dim=-1)  # (K, M)
    first = nearest_indices(q, mem)
    return d2, first


def compactness_loss(queries, bank) -> torch.Tensor:
    """Sum over queries of the squared distance to the most similar memory."""
    q, mem = _vecs(queries), _vecs(bank)
    q = q.reshape(-1, q.shape[-1])
    d2, first = _two_nearest(q, mem)
    return d2.gather(1, first.unsqueeze(1)).sum()


def separateness_loss(queries, bank, alpha: float = 1.0) -> torch.Tensor:
    """Hinge pushing the second most similar memory beyond the nearest one."""
    q, mem = _vecs(queries), _vecs(bank)
    if mem.shape[0] < 2:
        raise ValueError("separateness needs at least two memories")
    if alpha < 0:
        raise ValueError("margin must be non-negative")
    q = q.reshape(-1, q.shape[-1])
    d2, first = _two_nearest(q, mem)
    sim = similarities(q, mem)
    sim[torch.arange(q.shape[0]), first] = float("-inf")
    second = first_argmax(sim)
    d_p = d2.gather(1, first.unsqueeze(1)).squeeze(1)
    d_n = d2.gather(1, second.unsqueeze(1)).squeeze(1)
    return torch.clamp(d_p - d_n + alpha, min=0).sum()


@dataclass
class LossWeights:
    lam_n: float = 0.1
    mu_n: float = 0.1
    nu_n: float = 0.1
    lam_a: float = 0.1
    mu_a: float = 0.1
    nu_a: float = 0.1
    alpha: float = 1.0
    beta: float = 1.0
    # "sum": terms summed over pixels / queries as written; "mean": averaged instead
    reduction: str = "sum"

    def __post_init__(self):
        if self.reduction not in ("sum", "mean"):
            raise ValueError(f"unknown reduction {self.reduction!r}")
        for f in fields(self):
            if f.name != "reduction" and getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")


@dataclass
class LossBundle:
    rec: torch.Tensor
    comN: torch.Tensor
    sepN: torch.Tensor
    triN: torch.Tensor
    comA: torch.Tensor
    sepA: torch.Tensor
    triA: torch.Tensor
    total: torch.Tensor

    COMPONENTS = ("rec", "comN", "sepN", "triN", "comA", "sepA", "triA")

    def as_floats(self) -> dict[str, float]:
        return {name: float(getattr(self, name).detach()) for name in self.COMPONENTS + ("total",)}


def combine(components: dict[str, torch.Tensor], w: LossWeights) -> torch.Tensor:
    """Weighted total, accumulated in float64 so it can be recomputed from logged parts."""
    c = {k: v.to(torch.float64) for k, v in components.items()}
    return (
        c["rec"]
        + w.lam_n * c["comN"]
        + w.mu_n * c["sepN"]
        + w.nu_n * c["triN"]
        + w.lam_a * c["comA"]
        + w.mu_a * c["sepA"]
        + w.nu_a * c["triA"]
    )


@dataclass
class BatchOutputs:
    """What the loss needs from one forward pass.

    ``queries`` maps a branch to (B, K_q, C) unit queries; ``features`` maps a
    branch to (B, D) discriminator features (absent without discriminators);
    ``memory`` maps a branch to its (M, C) bank; ``bank_labels`` says which
    sample labels feed each bank's compactness/separateness terms.
    """

    pred: torch.Tensor
    target: torch.Tensor
    labels: torch.Tensor
    queries: dict
    memory: dict
    features: dict
    bank_labels: dict


def _sample_triplets(labels: np.ndarray, rng: np.random.Generator):
    normal = np.flatnonzero(labels == 0)
    abnormal = np.flatnonzero(labels == 1)
    if abnormal.size == 0:
        return None
    anchors, positives, negatives = [], [], []
    for i in normal:
        others = normal[normal != i]
        positives.append(int(rng.choice(others)) if others.size else int(i))
        negatives.append(int(rng.choice(abnormal)))
        anchors.append(int(i))
    return anchors, positives, negatives


def total_loss(out: BatchOutputs, w: LossWeights, rng: np.random.Generator) -> LossBundle:
    labels = out.labels.detach().cpu().numpy().astype(int)
    if not (labels == 0).any():
        raise ValueError("batch has no normal sample")
    b = len(labels)
    zero = out.pred.new_zeros(())
    normal = torch.as_tensor(labels == 0)

    mean = w.reduction == "mean"
    pixels = out.pred[0].numel() if mean else 1

    comps = dict.fromkeys(LossBundle.COMPONENTS, zero)
    comps["rec"] = reconstruction_loss(out.pred[normal], out.target[normal]) / (b * pixels)

    suffix = {Branch.NORMALITY: "N", Branch.ABNORMALITY: "A"}
    for branch, mem in out.memory.items():
        allowed = out.bank_labels[branch]
        rows = torch.as_tensor(np.isin(labels, list(allowed)))
        if not rows.any():
            continue
        q = out.queries[branch][rows]
        s = suffix[Branch(branch)]
        per = b * (q.shape[1] if mean else 1)
        comps["com" + s] = compactness_loss(q, mem) / per
        if mem.shape[0] >= 2:
            comps["sep" + s] = separateness_loss(q, mem, w.alpha) / per

    if out.features:
        trip = _sample_triplets(labels, rng)
        if trip is not None:
            a, p, n = (torch.as_tensor(ix) for ix in trip)
            for branch, feat in out.features.items():
                s = suffix[Branch(branch)]
                comps["tri" + s] = triplet_loss(feat[a], feat[p], feat[n], w.beta) / b

    return LossBundle(**comps, total=combine(comps, w))
