"""The bundled synthetic benchmark: 20 normal + 4 abnormal videos, 10% abnormal-rate split."""

from __future__ import annotations

from dataclasses import replace

from .config import RunConfig, desk_profile
from .data import Dataset, kfold_split, rate_split, synth_generate
from .harness import RunReport, evaluate, train


def benchmark_config(variant: str = "dream", **train_overrides) -> RunConfig:
    cfg = desk_profile()
    cfg.model = replace(cfg.model, variant=variant)
    if train_overrides:
        cfg.train = replace(cfg.train, **train_overrides)
    return cfg


def make_split(cfg: RunConfig, ds: Dataset):
    s, T = cfg.split, cfg.model.frames_in
    if s.protocol == "kfold":
        return kfold_split(ds.normal_train, ds.abnormal, s.K, s.fold, T, ds.normal_test)
    return rate_split(ds.normal_train, ds.abnormal, s.rate, s.seed, T, ds.normal_test)


def run_benchmark(cfg: RunConfig, ds: Dataset | None = None, run_dir=None) -> RunReport:
    ds = synth_generate(cfg.data, cfg.data_seed) if ds is None else ds
    train_set, test_set = make_split(cfg, ds)
    videos = ds.videos()
    ckpt = train(cfg, videos, train_set, run_dir=run_dir)
    return evaluate(ckpt, videos, test_set)
