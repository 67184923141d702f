"""Command-line entry point.

Every subcommand works inside one run directory. The resolved configuration is
written there as ``config.json`` on each invocation and reused as the base by
later subcommands, so ``--config`` and ``--set`` are only needed the first time.

Layout of a run directory::

    config.json        resolved configuration snapshot
    data/              synthetic dataset (or pass --data-dir)
    split.json         train/test clip ranges
    checkpoint.pt      parameters, banks, loss trace
    banks/             memory banks as .npy + .json sidecars
    loss_log.csv       per-iteration loss components
    scores.csv         per-frame psnr, dist, score, label
    report.json        AUC, per-video AUC, epoch stats, distance summary
    distances.json     memory-distance diagnostics
    features.csv       pooled discriminator features per clip
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .benchmark import make_split
from .config import ConfigError, RunConfig, load_config
from .data import DataError, load_dataset, load_split, save_dataset, save_split, synth_generate
from .harness import (
    NumericError,
    clip_distances,
    evaluate,
    export_features,
    load_checkpoint,
    read_csv,
    save_checkpoint,
    train,
    write_csv,
)
from .memory import save_bank
from .scoring import frame_auc, score_video

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class Run:
    """Paths and lazily loaded artifacts of one run directory."""

    def __init__(self, args):
        self.dir = Path(args.run_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        snapshot = self.dir / "config.json"
        base = args.config or (snapshot if snapshot.exists() else None)
        profile = "published" if args.paper_scale else "desk"
        self.cfg: RunConfig = load_config(base, profile, args.set)
        snapshot.write_text(json.dumps(self.cfg.to_dict(), indent=2))
        self.data_dir = Path(args.data_dir) if getattr(args, "data_dir", None) else self.dir / "data"

    def path(self, name: str) -> Path:
        return self.dir / name

    def dataset(self):
        if not self.data_dir.exists():
            raise DataError(f"no dataset at {self.data_dir}; run `synth` first or pass --data-dir")
        return load_dataset(self.data_dir)

    def split(self, ds):
        p = self.path("split.json")
        if p.exists():
            train_set, test_set, _ = load_split(p)
            return train_set, test_set
        train_set, test_set = make_split(self.cfg, ds)
        save_split(p, train_set, test_set, self.cfg.to_dict()["split"])
        return train_set, test_set

    def checkpoint(self):
        p = self.path("checkpoint.pt")
        if not p.exists():
            raise DataError(f"no checkpoint at {p}; run `train` first")
        try:
            return load_checkpoint(p)
        except (ValueError, RuntimeError) as err:
            raise DataError(f"unreadable checkpoint {p}: {err}") from err


def _print(obj) -> None:
    print(json.dumps(obj, indent=2))


def cmd_synth(run: Run, args) -> None:
    ds = synth_generate(run.cfg.data, run.cfg.data_seed)
    save_dataset(ds, run.data_dir)
    _print({"data_dir": str(run.data_dir), "normal_train": len(ds.normal_train), "abnormal": len(ds.abnormal), "normal_test": len(ds.normal_test)})


def cmd_split(run: Run, args) -> None:
    ds = run.dataset()
    split = run.path("split.json")
    if split.exists():
        split.unlink()
    train_set, test_set = run.split(ds)
    videos = ds.videos()
    _print(
        {
            "train_normal": train_set.count_label(videos, 0),
            "train_abnormal": train_set.count_label(videos, 1),
            "test_normal": test_set.count_label(videos, 0),
            "test_abnormal": test_set.count_label(videos, 1),
        }
    )


def cmd_train(run: Run, args) -> None:
    ds = run.dataset()
    train_set, _ = run.split(ds)
    ckpt = train(run.cfg, ds.videos(), train_set, run_dir=run.dir)
    save_checkpoint(ckpt, run.path("checkpoint.pt"))
    banks = run.path("banks")
    banks.mkdir(exist_ok=True)
    for b, bank in ckpt.banks.items():
        save_bank(bank, banks / b.value)
    _print({"checkpoint": str(run.path("checkpoint.pt")), "iterations": len(ckpt.loss_trace), "final": ckpt.epoch_stats[-1]})


def cmd_eval(run: Run, args) -> None:
    ds = run.dataset()
    _, test_set = run.split(ds)
    report = evaluate(run.checkpoint(), ds.videos(), test_set, gamma=args.gamma)
    write_csv(run.path("scores.csv"), report.records)
    run.path("report.json").write_text(json.dumps(report.to_dict(), indent=2))
    _print({"auc": report.auc, "per_video_auc": report.per_video_auc})


def cmd_score(run: Run, args) -> None:
    """Re-blend stored psnr and dist series with another gamma."""
    src = Path(args.scores) if args.scores else run.path("scores.csv")
    if not src.exists():
        raise DataError(f"no score table at {src}; run `eval` first")
    gamma = run.cfg.train.gamma if args.gamma is None else args.gamma
    by_video: dict[str, list] = {}
    for row in read_csv(src):
        by_video.setdefault(row["video_id"], []).append(row)
    records = []
    for vid in sorted(by_video):
        rows = sorted(by_video[vid], key=lambda r: int(r["frame"]))
        recs = score_video(
            vid,
            [float(r["psnr"]) for r in rows],
            [float(r["dist"]) for r in rows],
            [int(r["label"]) for r in rows],
            gamma,
            frames=[int(r["frame"]) for r in rows],
        )
        records.extend(r.__dict__ for r in recs)
    out = Path(args.out) if args.out else run.path(f"scores_gamma{gamma:g}.csv")
    write_csv(out, records)
    _print({"gamma": gamma, "auc": frame_auc([r["score"] for r in records], [r["label"] for r in records]), "scores": str(out)})


def cmd_diagnose(run: Run, args) -> None:
    ds = run.dataset()
    train_set, test_set = run.split(ds)
    ckpt = run.checkpoint()
    clips = train_set if args.on == "train" else test_set
    summary = clip_distances(ckpt, ds.videos(), clips)
    summary["epoch_train_dNN"] = [e.get("train_dNN") for e in ckpt.epoch_stats]
    run.path("distances.json").write_text(json.dumps(summary, indent=2))
    _print({"on": args.on, "means": summary["means"], "r_normal": summary.get("r_normal"), "r_abnormal": summary.get("r_abnormal")})


def cmd_export(run: Run, args) -> None:
    ds = run.dataset()
    train_set, test_set = run.split(ds)
    clips = train_set if args.on == "train" else test_set
    rows = export_features(run.checkpoint(), ds.videos(), clips)
    write_csv(run.path("features.csv"), rows)
    _print({"rows": len(rows), "features": str(run.path("features.csv"))})


def cmd_report(run: Run, args) -> None:
    p = run.path("report.json")
    if not p.exists():
        raise DataError(f"no report at {p}; run `eval` first")
    report = json.loads(p.read_text())
    out = {"variant": report["variant"], "auc": report["auc"], "per_video_auc": report["per_video_auc"]}
    if report.get("epochs"):
        out["final_epoch"] = report["epochs"][-1]
    dist = report.get("distances")
    if run.path("distances.json").exists():
        dist = json.loads(run.path("distances.json").read_text())
    if dist:
        out["distance_means"] = dist["means"]
        out["r_normal"], out["r_abnormal"] = dist.get("r_normal"), dist.get("r_abnormal")
    _print(out)


COMMANDS = {
    "synth": (cmd_synth, "generate the synthetic dataset"),
    "split": (cmd_split, "write the train/test split"),
    "train": (cmd_train, "train a model and write its checkpoint"),
    "eval": (cmd_eval, "score the test set with frozen memories"),
    "score": (cmd_score, "re-blend stored per-frame scores with another gamma"),
    "diagnose": (cmd_diagnose, "memory-distance statistics"),
    "export-features": (cmd_export, "per-clip discriminator features as CSV"),
    "report": (cmd_report, "summarize a run directory"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one config value")
    common.add_argument("--paper-scale", action="store_true", help="start from the published-scale profile")
    common.add_argument("--run-dir", default="runs/default", help="run directory (default: %(default)s)")
    common.add_argument("--data-dir", help="dataset root (default: <run-dir>/data)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dream-vad", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_)
        if name in ("eval", "score"):
            p.add_argument("--gamma", type=float, help="psnr weight in the blended score")
        if name == "score":
            p.add_argument("--scores", help="input score CSV (default: <run-dir>/scores.csv)")
            p.add_argument("--out", help="output CSV")
        if name in ("diagnose", "export-features"):
            p.add_argument("--on", choices=("train", "test"), default="test", help="which clip set (default: %(default)s)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run = Run(args)
        COMMANDS[args.command][0](run, args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
