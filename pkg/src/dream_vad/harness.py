"""Training loop, frozen-memory evaluation, feature export and checkpoints."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .data import ClipSet, DataError
from .losses import BatchOutputs, LossBundle, total_loss
from .memory import Branch, MemoryBank, init_bank, update_tensor
from .network import DreamNet, ModelConfig
from .scoring import (
    avg_min_distance,
    clip_bank_distances,
    compactness_distance,
    distance_ratios,
    frame_auc,
    psnr,
    score_video,
    DistanceSummary,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dream-vad-checkpoint"
CHECKPOINT_VERSION = 1
LOSS_COLUMNS = ("iteration", "epoch", "rec", "comN", "sepN", "triN", "comA", "sepA", "triA", "total", "lr")


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class Checkpoint:
    config: RunConfig
    state_dict: dict
    banks: dict  # Branch -> MemoryBank
    loss_trace: list = field(default_factory=list)  # one dict per iteration
    epoch_stats: list = field(default_factory=list)  # one dict per epoch

    def build_model(self) -> DreamNet:
        net = DreamNet(self.config.model)
        net.load_state_dict(self.state_dict)
        net.eval()
        return net

    def memory(self) -> dict:
        return {b: bank.vectors for b, bank in self.banks.items()}


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": ckpt.config.to_dict(),
        "state_dict": ckpt.state_dict,
        "banks": {
            b.value: {"vectors": bank.vectors.clone(), "branch": bank.branch.value, "format_version": 1}
            for b, bank in ckpt.banks.items()
        },
        "loss_trace": ckpt.loss_trace,
        "epoch_stats": ckpt.epoch_stats,
    }
    torch.save(doc, path)


def load_checkpoint(path) -> Checkpoint:
    doc = torch.load(path, map_location="cpu", weights_only=True)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path} is not a version {CHECKPOINT_VERSION} checkpoint")
    banks = {Branch(k): MemoryBank(v["vectors"], v["branch"]) for k, v in doc["banks"].items()}
    return Checkpoint(RunConfig.from_dict(doc["config"]), doc["state_dict"], banks, doc["loss_trace"], doc["epoch_stats"])


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- batching


class ClipTable:
    """Dense float32 tensors for a ClipSet so batches are plain indexing."""

    def __init__(self, videos: dict, clips: ClipSet, T: int):
        self.refs = clips.refs()
        if not self.refs:
            raise DataError("empty clip set")
        frames = {vid: torch.from_numpy(videos[vid].frames) for vid in {v for v, _ in self.refs}}
        self.inputs = torch.stack([frames[v][t - T : t] for v, t in self.refs])
        self.targets = torch.stack([frames[v][t] for v, t in self.refs])
        self.labels = torch.tensor([int(videos[v].labels[t]) for v, t in self.refs])

    def __len__(self) -> int:
        return len(self.refs)


def make_batches(labels: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled batches; when any abnormal clip exists every batch holds at least one.

    Abnormal clips are cycled if there are fewer of them than batches.
    """
    normal = rng.permutation(np.flatnonzero(labels == 0))
    abnormal = rng.permutation(np.flatnonzero(labels == 1))
    if normal.size == 0:
        raise DataError("training set has no normal clips")
    n_batches = max(1, min(math.ceil(len(labels) / batch_size), normal.size))
    if abnormal.size == 0:
        return [np.sort(c) for c in np.array_split(normal, n_batches)]
    if abnormal.size < n_batches:
        reps = math.ceil(n_batches / abnormal.size)
        abnormal = np.concatenate([abnormal] + [rng.permutation(abnormal) for _ in range(reps - 1)])[:n_batches]
    batches = [
        np.concatenate([n, a]) for n, a in zip(np.array_split(normal, n_batches), np.array_split(abnormal, n_batches))
    ]
    order = rng.permutation(n_batches)
    return [batches[i] for i in order]


def bank_labels(cfg: ModelConfig) -> dict:
    """Which sample labels update (and feed the com/sep terms of) each bank."""
    if cfg.variant == "dream":
        return {Branch.NORMALITY: {0}, Branch.ABNORMALITY: {1}}
    if cfg.variant == "mem_disc":
        return {Branch.NORMALITY: {0, 1}}  # one shared space
    if cfg.variant == "mem":
        return {Branch.NORMALITY: {0}}
    return {}


def initial_banks(cfg: ModelConfig, seed: int) -> dict:
    if not cfg.uses_memory:
        return {}
    return {b: init_bank(cfg.memory_size, cfg.head_dim, seed * 1000 + 17 + i, b) for i, b in enumerate(cfg.branches)}


def _set_determinism(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


# ---------------------------------------------------------------- training


def train(cfg: RunConfig, videos: dict, train_set: ClipSet, run_dir=None) -> Checkpoint:
    """Per batch: forward, weighted loss, backward, Adam step, then memory update
    with the post-step queries of the batch (normal -> normality bank, abnormal ->
    abnormality bank)."""
    mcfg, tcfg = cfg.model, cfg.train
    _set_determinism(tcfg.seed)
    rng = np.random.default_rng(tcfg.seed)
    table = ClipTable(videos, train_set, mcfg.frames_in)
    if mcfg.variant == "mem":
        keep = (table.labels == 0).nonzero().squeeze(1)
        table.inputs, table.targets, table.labels = table.inputs[keep], table.targets[keep], table.labels[keep]
        table.refs = [table.refs[i] for i in keep.tolist()]
    labels_np = table.labels.numpy()

    net = DreamNet(mcfg)
    banks = initial_banks(mcfg, tcfg.seed)
    routes = bank_labels(mcfg)
    opt = torch.optim.Adam(net.parameters(), lr=tcfg.lr, betas=(tcfg.beta1, tcfg.beta2))
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=tcfg.epochs, eta_min=0.0)

    track = np.flatnonzero(labels_np == 0)
    track = track[np.linspace(0, track.size - 1, min(tcfg.track_clips, track.size)).astype(int)]

    trace, epoch_stats = [], []
    writer = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(run_dir / "loss_log.csv", "w", newline="")
        writer = csv.writer(log_file)
        writer.writerow(LOSS_COLUMNS)
    it = 0
    try:
        for epoch in range(tcfg.epochs):
            net.train()
            lr = opt.param_groups[0]["lr"]
            sums = dict.fromkeys(LossBundle.COMPONENTS + ("total",), 0.0)
            batches = make_batches(labels_np, tcfg.batch_size, rng)
            for idx in batches:
                idx_t = torch.as_tensor(idx)
                x, y, lab = table.inputs[idx_t], table.targets[idx_t], table.labels[idx_t]
                memory = {b: bank.vectors for b, bank in banks.items()}
                out = net(x, memory)
                bundle = total_loss(
                    BatchOutputs(out.pred, y, lab, out.queries, memory, out.features, routes), cfg.loss, rng
                )
                vals = bundle.as_floats()
                if not all(math.isfinite(v) for v in vals.values()):
                    _dump_failure(run_dir, it, epoch, vals)
                    raise NumericError(f"non-finite loss at iteration {it}: {vals}")
                opt.zero_grad(set_to_none=True)
                bundle.total.backward()
                opt.step()

                with torch.no_grad():
                    enc = net.encode(x)
                lab_np = lab.numpy()
                for b, allowed in routes.items():
                    rows = torch.as_tensor(np.isin(lab_np, list(allowed)))
                    if rows.any():
                        q = enc.queries[b][rows]
                        banks[b] = MemoryBank(update_tensor(banks[b].vectors, q), b)

                row = {"iteration": it, "epoch": epoch, **vals, "lr": lr}
                trace.append(row)
                if writer is not None:
                    writer.writerow([row[c] for c in LOSS_COLUMNS])
                for k in sums:
                    sums[k] += vals[k]
                it += 1
            sched.step()
            stats = {"epoch": epoch, "lr": lr, **{k: v / len(batches) for k, v in sums.items()}}
            if banks:
                stats["train_dNN"] = _mean_own_distance(net, table, track, banks)
            epoch_stats.append(stats)
            log.info("epoch %d total %.4f", epoch, stats["total"])
    finally:
        if writer is not None:
            log_file.close()

    state = {k: v.detach().clone() for k, v in net.state_dict().items()}
    return Checkpoint(cfg, state, banks, trace, epoch_stats)


def _dump_failure(run_dir, it, epoch, vals) -> None:
    if run_dir is None:
        return
    Path(run_dir, "numeric_failure.json").write_text(json.dumps({"iteration": it, "epoch": epoch, "losses": vals}, indent=2, default=str))


@torch.no_grad()
def _mean_own_distance(net: DreamNet, table: ClipTable, rows: np.ndarray, banks: dict) -> float:
    was_training = net.training
    net.eval()
    enc = net.encode(table.inputs[torch.as_tensor(rows)])
    bank = banks[Branch.NORMALITY].vectors
    d = float(np.mean([avg_min_distance(q, bank) for q in enc.queries[Branch.NORMALITY]]))
    net.train(was_training)
    return d


# ---------------------------------------------------------------- evaluation


@dataclass
class RunReport:
    variant: str
    auc: float
    per_video_auc: dict
    epochs: list
    distances: dict | None
    records: list  # ScoreRecord dicts
    timing: dict = field(default_factory=dict)

    def to_dict(self, with_records: bool = False) -> dict:
        d = {
            "variant": self.variant,
            "auc": self.auc,
            "per_video_auc": self.per_video_auc,
            "epochs": self.epochs,
            "distances": self.distances,
            "timing": self.timing,
        }
        if with_records:
            d["records"] = self.records
        return d

    def deterministic_view(self) -> dict:
        """Everything except wall-clock timing."""
        d = self.to_dict(with_records=True)
        d.pop("timing")
        return d


@torch.no_grad()
def infer_video(net: DreamNet, memory: dict, videos: dict, vid: str, targets: list, T: int, chunk: int = 32):
    """Predictions, normality queries and all-branch queries for the given targets of one video."""
    frames = torch.from_numpy(videos[vid].frames)
    preds, queries = [], {b: [] for b in net.cfg.branches}
    for s in range(0, len(targets), chunk):
        ts = targets[s : s + chunk]
        x = torch.stack([frames[t - T : t] for t in ts])
        out = net(x, memory)
        preds.append(out.pred)
        for b in queries:
            queries[b].append(out.queries[b])
    return torch.cat(preds), {b: torch.cat(v) for b, v in queries.items()}, frames[targets]


def evaluate(ckpt: Checkpoint, videos: dict, test_set: ClipSet, gamma: float | None = None) -> RunReport:
    """Frozen-memory scoring of every test video, pooled frame AUC and distance statistics."""
    t0 = time.perf_counter()
    cfg = ckpt.config
    gamma = cfg.train.gamma if gamma is None else gamma
    net = ckpt.build_model()
    memory = ckpt.memory()
    T = cfg.model.frames_in
    records, per_video = [], {}
    dist_rows = {"dNN": [], "dNA": [], "dAN": [], "dAA": [], "labels": []}
    for vid in sorted(test_set):
        targets = test_set[vid]
        pred, queries, truth = infer_video(net, memory, videos, vid, targets, T)
        p_series = [psnr((p.numpy() + 1) / 2, (g.numpy() + 1) / 2) for p, g in zip(pred, truth)]
        if cfg.model.uses_memory:
            bankN = memory[Branch.NORMALITY]
            d_series = [compactness_distance(q, bankN) for q in queries[Branch.NORMALITY]]
        else:
            d_series = [0.0] * len(targets)
        labels = [int(videos[vid].labels[t]) for t in targets]
        recs = score_video(vid, p_series, d_series, labels, gamma, frames=targets)
        records.extend(r.__dict__ for r in recs)
        if len(set(labels)) == 2:
            per_video[vid] = frame_auc([r.score for r in recs], labels)
        if cfg.model.variant == "dream":
            _append_distances(dist_rows, queries, labels, memory)
    auc = frame_auc([r["score"] for r in records], [r["label"] for r in records])
    distances = summarize_distances(dist_rows) if dist_rows["labels"] else None
    return RunReport(
        cfg.model.variant,
        auc,
        per_video,
        ckpt.epoch_stats,
        distances,
        records,
        {"eval_seconds": time.perf_counter() - t0},
    )


def summarize_distances(rows: dict) -> dict:
    """Per-clip distances plus ratios over normal clips (normality head) and abnormal clips (abnormality head)."""
    lab = np.asarray(rows["labels"])
    arr = {k: np.asarray(rows[k]) for k in ("dNN", "dNA", "dAN", "dAA")}
    summary = DistanceSummary(*(arr[k].tolist() for k in ("dNN", "dNA", "dAN", "dAA")), labels=lab.tolist())
    out = summary.to_dict()
    means = {}
    for name, mask in (("normal", lab == 0), ("abnormal", lab == 1)):
        for k, v in arr.items():
            means[f"{k}_{name}"] = float(v[mask].mean()) if mask.any() else None
    out["means"] = means
    n, a = lab == 0, lab == 1
    if n.any() and a.any():
        out["r_normal"], out["r_abnormal"] = distance_ratios(arr["dNN"][n], arr["dNA"][n], arr["dAN"][a], arr["dAA"][a])
    return out


def _append_distances(rows: dict, queries: dict, labels, memory: dict) -> None:
    bN, bA = memory[Branch.NORMALITY], memory[Branch.ABNORMALITY]
    for qn, qa, lab in zip(queries[Branch.NORMALITY], queries[Branch.ABNORMALITY], labels):
        dNN, dNA, dAN, dAA = clip_bank_distances(qn, qa, bN, bA)
        for k, v in (("dNN", dNN), ("dNA", dNA), ("dAN", dAN), ("dAA", dAA), ("labels", lab)):
            rows[k].append(v)


def clip_distances(ckpt: Checkpoint, videos: dict, clips: ClipSet) -> dict:
    if ckpt.config.model.variant != "dream":
        raise ValueError("memory-distance diagnostics need the dual-memory model")
    net = ckpt.build_model()
    memory = ckpt.memory()
    rows = {"dNN": [], "dNA": [], "dAN": [], "dAA": [], "labels": []}
    for vid in sorted(clips):
        _, queries, _ = infer_video(net, memory, videos, vid, clips[vid], ckpt.config.model.frames_in)
        _append_distances(rows, queries, [int(videos[vid].labels[t]) for t in clips[vid]], memory)
    return summarize_distances(rows)


@torch.no_grad()
def export_features(ckpt: Checkpoint, videos: dict, clips: ClipSet) -> list[dict]:
    """Pooled discriminator features of each branch plus the clip label, one row per clip."""
    net = ckpt.build_model()
    memory = ckpt.memory()
    T = ckpt.config.model.frames_in
    rows = []
    for vid in sorted(clips):
        frames = torch.from_numpy(videos[vid].frames)
        for t in clips[vid]:
            enc = net.encode(frames[t - T : t].unsqueeze(0))
            _, augmented, _ = net.read_all(enc, memory)
            row = {"video_id": vid, "frame": t, "label": int(videos[vid].labels[t])}
            for b in net.cfg.branches:
                feat = net.discriminate(augmented[b], b) if net.cfg.uses_disc else augmented[b].mean(dim=(2, 3))
                short = "N" if b is Branch.NORMALITY else "A"
                row.update({f"f{short}_{i}": float(v) for i, v in enumerate(feat[0])})
            rows.append(row)
    return rows


def write_csv(path, rows: list[dict]) -> None:
    if not rows:
        raise ValueError("nothing to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
