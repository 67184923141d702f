"""Prototype memory banks: softmax read and class-restricted assignment update.

Banks are kept in float64 regardless of the network dtype. Reading casts the
bank to the query dtype and detaches it, so gradients reach the queries but
never the memory vectors; the only way a bank changes is :func:`update`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

BANK_FORMAT_VERSION = 1


class Branch(str, Enum):
    NORMALITY = "normality"
    ABNORMALITY = "abnormality"


# sample label -> the only branch whose bank it may update
_LABEL_TO_BRANCH = {0: Branch.NORMALITY, 1: Branch.ABNORMALITY}


def l2_normalize(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return F.normalize(x, p=2.0, dim=dim, eps=1e-12)


@dataclass
class MemoryBank:
    vectors: torch.Tensor  # (M, C) float64, unit rows
    branch: Branch

    def __post_init__(self):
        self.branch = Branch(self.branch)
        if self.vectors.dim() != 2 or min(self.vectors.shape) < 1:
            raise ValueError(f"bank must be a non-empty (M, C) matrix, got {tuple(self.vectors.shape)}")
        self.vectors = self.vectors.detach().to(torch.float64)

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def clone(self) -> "MemoryBank":
        return MemoryBank(self.vectors.clone(), self.branch)


@dataclass
class QueryGrid:
    """Unit-norm query vectors of one encoder head for one sample (or a batch
    of same-label samples flattened together)."""

    vectors: torch.Tensor  # (K_q, C)
    branch: Branch
    label: int = 0  # 0 normal, 1 abnormal
    normalize: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.branch = Branch(self.branch)
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if self.vectors.dim() != 2:
            raise ValueError("queries must be a (K_q, C) matrix")
        if self.normalize:
            self.vectors = l2_normalize(self.vectors)

    @classmethod
    def from_feature_map(cls, fmap: torch.Tensor, branch, label: int = 0) -> "QueryGrid":
        """Flatten a (C, H, W) head output into H*W row-major queries."""
        c = fmap.shape[0]
        return cls(fmap.reshape(c, -1).transpose(0, 1), branch, label)


@dataclass
class ReadResult:
    augmented: torch.Tensor  # (K_q, 2C): [retrieved, query]
    weights: torch.Tensor  # (K_q, M), rows sum to 1


def init_bank(m: int, c: int, seed: int, branch=Branch.NORMALITY) -> MemoryBank:
    if m < 1 or c < 1:
        raise ValueError(f"bank needs M >= 1 and C >= 1, got M={m}, C={c}")
    gen = torch.Generator().manual_seed(int(seed))
    raw = torch.randn(m, c, generator=gen, dtype=torch.float64)
    return MemoryBank(l2_normalize(raw), branch)


def _check_dims(queries: torch.Tensor, bank: torch.Tensor) -> None:
    if queries.shape[-1] != bank.shape[-1]:
        raise ValueError(f"query dim {queries.shape[-1]} != memory dim {bank.shape[-1]}")


def read_weights(queries: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
    """Row softmax of query-memory cosine similarities, shape (..., K_q, M)."""
    _check_dims(queries, memory)
    mem = memory.detach().to(queries.dtype)
    return torch.softmax(queries @ mem.transpose(-1, -2), dim=-1)


def read_tensor(queries: torch.Tensor, memory: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Batched read on raw tensors. ``queries`` is (..., K_q, C)."""
    w = read_weights(queries, memory)
    retrieved = w @ memory.detach().to(queries.dtype)
    return torch.cat([retrieved, queries], dim=-1), w


def read(queries: QueryGrid, bank: MemoryBank) -> ReadResult:
    augmented, w = read_tensor(queries.vectors, bank.vectors)
    return ReadResult(augmented, w)


def first_argmax(sim: torch.Tensor) -> torch.Tensor:
    """Argmax over the last axis, ties resolved to the lowest index."""
    # torch.argmax does not document tie order
    best = sim.max(dim=-1, keepdim=True).values
    ar = torch.arange(sim.shape[-1], 0, -1, device=sim.device)
    return torch.argmax((sim == best) * ar, dim=-1)


def similarities(queries: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
    _check_dims(queries, memory)
    return queries.detach().to(torch.float64) @ memory.detach().to(torch.float64).transpose(-1, -2)


def nearest_indices(queries: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
    """Index of the most similar memory per query; ties go to the lowest index."""
    return first_argmax(similarities(queries, memory))


def update_tensor(memory: torch.Tensor, queries: torch.Tensor) -> torch.Tensor:
    """Assignment update on raw tensors; returns a new (M, C) float64 matrix.

    Each query is assigned to its nearest memory. Memory ``m`` moves by the
    sum of its assigned queries weighted by the query-axis softmax of the
    similarities, restricted to the assigned set and renormalized there.
    Memories with no assigned query are copied unchanged.
    """
    _check_dims(queries, memory)
    mem = memory.detach().to(torch.float64)
    q = queries.detach().to(torch.float64).reshape(-1, mem.shape[1])
    if q.shape[0] == 0:
        return mem.clone()
    sim = q @ mem.T  # (K, M)
    idx = nearest_indices(q, mem)
    assigned = torch.zeros_like(sim, dtype=torch.bool)
    assigned[torch.arange(q.shape[0]), idx] = True
    masked = sim.masked_fill(~assigned, float("-inf"))
    # column-wise softmax over the assigned set; empty columns become all -inf
    col_max = masked.max(dim=0, keepdim=True).values
    has_any = assigned.any(dim=0)
    col_max = torch.where(has_any.unsqueeze(0), col_max, torch.zeros_like(col_max))
    e = torch.exp(masked - col_max)
    denom = e.sum(dim=0, keepdim=True)
    v = torch.where(has_any.unsqueeze(0), e / denom.clamp_min(1e-300), torch.zeros_like(e))
    step = v.T @ q  # (M, C)
    moved = mem + step
    # an antipodal query can cancel its memory exactly; such a memory stays put
    live = has_any & (moved.norm(dim=1) > 1e-12)
    out = mem.clone()
    out[live] = l2_normalize(moved[live])
    return out


def update(bank: MemoryBank, queries: QueryGrid) -> MemoryBank:
    """Return the updated bank. The query label must match the bank branch."""
    if _LABEL_TO_BRANCH[queries.label] is not bank.branch:
        raise ValueError(
            f"{'abnormal' if queries.label else 'normal'} queries cannot update the {bank.branch.value} bank"
        )
    return MemoryBank(update_tensor(bank.vectors, queries.vectors), bank.branch)


def save_bank(bank: MemoryBank, path) -> None:
    """Write ``<path>.npy`` (row-major float64) and a ``<path>.json`` sidecar."""
    path = Path(path).with_suffix("")
    arr = np.ascontiguousarray(bank.vectors.numpy().astype(np.float64))
    np.save(path.with_suffix(".npy"), arr)
    meta = {
        "format_version": BANK_FORMAT_VERSION,
        "branch": bank.branch.value,
        "shape": list(arr.shape),
        "dtype": "float64",
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2))


def load_bank(path) -> MemoryBank:
    path = Path(path).with_suffix("")
    meta = json.loads(path.with_suffix(".json").read_text())
    if meta.get("format_version") != BANK_FORMAT_VERSION:
        raise ValueError(f"unsupported bank format version {meta.get('format_version')}")
    arr = np.load(path.with_suffix(".npy"))
    if list(arr.shape) != meta["shape"]:
        raise ValueError("bank shape does not match sidecar metadata")
    return MemoryBank(torch.from_numpy(arr.astype(np.float64)), meta["branch"])
