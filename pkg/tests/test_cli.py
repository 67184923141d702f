import json

import pytest

from dream_vad import cli
from dream_vad.harness import read_csv
from dream_vad.scoring import frame_auc

TINY = {
    "data": {"frame_size": 16, "object_size": 4, "n_normal": 3, "n_abnormal": 2, "normal_length": 10, "abnormal_length": 24, "segment_length": 8, "noise": 1.0},
    "model": {"frame_size": 16, "grid": 4, "widths": [4, 8], "query_dim": 4, "memory_size": 3, "disc_dim": 4},
    "train": {"epochs": 1, "track_clips": 4},
}


@pytest.fixture
def run(tmp_path):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    rd = tmp_path / "run"

    def call(*args):
        return cli.main([args[0], "--run-dir", str(rd), *args[1:]])

    assert call("synth", "--config", str(cfg)) == 0
    return call, rd


def test_full_pipeline(run, capsys):
    call, rd = run
    snap = json.loads((rd / "config.json").read_text())
    assert snap["data"]["frame_size"] == 16 and snap["train"]["epochs"] == 1
    assert (rd / "data" / "dataset.json").exists()

    for cmd in ("split", "train", "eval"):
        assert call(cmd) == 0, cmd
    for name in ("split.json", "checkpoint.pt", "loss_log.csv", "scores.csv", "report.json", "banks/normality.npy", "banks/abnormality.json"):
        assert (rd / name).exists(), name

    report = json.loads((rd / "report.json").read_text())
    rows = read_csv(rd / "scores.csv")
    assert frame_auc([float(r["score"]) for r in rows], [int(r["label"]) for r in rows]) == pytest.approx(report["auc"])

    assert call("score", "--gamma", "1.0") == 0
    rescored = read_csv(rd / "scores_gamma1.csv")
    assert [r["psnr"] for r in rescored] == [r["psnr"] for r in rows]

    assert call("diagnose") == 0
    dist = json.loads((rd / "distances.json").read_text())
    assert dist["r_normal"] is not None and len(dist["epoch_train_dNN"]) == 1

    assert call("export-features", "--on", "test") == 0
    assert len(read_csv(rd / "features.csv")) == len(rows)

    capsys.readouterr()
    assert call("report") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["auc"] == report["auc"] and "r_normal" in out


def test_set_override_is_snapshotted(run):
    call, rd = run
    assert call("split", "--set", "split.rate=0.25") == 0
    assert json.loads((rd / "config.json").read_text())["split"]["rate"] == 0.25


def test_config_error_exit_code(run):
    call, _ = run
    assert call("split", "--set", "split.nope=1") == cli.EXIT_CONFIG
    assert call("split", "--set", "model.variant=\"unet\"") == cli.EXIT_CONFIG


def test_data_error_exit_code(tmp_path):
    rd = str(tmp_path / "empty")
    assert cli.main(["eval", "--run-dir", rd, "--set", "train.epochs=1"]) == cli.EXIT_DATA
    assert cli.main(["report", "--run-dir", rd]) == cli.EXIT_DATA


def test_rate_pool_too_small_is_data_error(run):
    call, _ = run
    assert call("split", "--set", "split.rate=0.9") == cli.EXIT_DATA


def test_numeric_failure_exit_code(run, monkeypatch):
    import dream_vad.harness as h

    call, rd = run
    real = h.total_loss

    def poisoned(*a, **k):
        b = real(*a, **k)
        b.rec = b.rec * float("nan")
        return b

    monkeypatch.setattr(h, "total_loss", poisoned)
    assert call("train") == cli.EXIT_NUMERIC
    dump = json.loads((rd / "numeric_failure.json").read_text())
    assert dump["iteration"] == 0


def test_published_scale_profile(tmp_path, capsys):
    rd = tmp_path / "published"
    # no dataset yet, so this stops right after the profile is resolved and snapshotted
    assert cli.main(["split", "--run-dir", str(rd), "--paper-scale"]) == cli.EXIT_DATA
    snap = json.loads((rd / "config.json").read_text())
    assert snap["model"]["query_dim"] == 256 and snap["train"]["epochs"] == 60 and snap["train"]["lr"] == 2e-5


def test_entry_point_declared():
    from importlib.metadata import entry_points

    names = {e.name: e.value for e in entry_points(group="console_scripts")}
    assert names.get("dream-vad") == "dream_vad.cli:main"
