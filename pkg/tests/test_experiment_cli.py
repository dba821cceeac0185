import csv
import filecmp
import json
import os

import pytest

from cyclecl import experiment as ex
from cyclecl.cli import main
from cyclecl.exceptions import ConfigError, NumericError

TINY = {
    "dataset": {"num_frames": 120, "period": 10.0, "n_train": 3, "n_test": 4,
                "anomaly_length": [10, 15], "anomalies_per_video": 1},
    "train": {"clip_length": 40, "epochs_max": 2, "batch_clips": 2},
    "anomaly": {"cycle_window": 16},
    "seeds": [0],
}


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def _tree(root):
    return sorted(os.path.relpath(os.path.join(d, f), root) for d, _, fs in os.walk(root) for f in fs)


def test_gen_is_byte_identical(tiny, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen", "--config", tiny, "--output-dir", str(a)]) == 0
    assert main(["gen", "--config", tiny, "--output-dir", str(b)]) == 0
    data_a, data_b = a / "seed_0" / "data", b / "seed_0" / "data"
    files = _tree(data_a)
    assert files == _tree(data_b) and len(files) == 2 + 2 * (3 + 4)
    _, mismatch, errors = filecmp.cmpfiles(data_a, data_b, files, shallow=False)
    assert not mismatch and not errors
    manifest = json.loads((a / "seed_0" / "run_manifest.json").read_text())
    assert "gen" in manifest["commands"] and "time" not in json.dumps(manifest).lower()


def test_invalid_period_exits_1(tiny, tmp_path, capsys):
    rc = main(["gen", "--config", tiny, "--set", "dataset.period=-1", "--output-dir", str(tmp_path)])
    assert rc == 1
    assert "period" in capsys.readouterr().err


def test_unknown_key_exits_1(tiny, capsys):
    assert main(["show-config", "--config", tiny, "--set", "train.bogus=1"]) == 1
    assert "train.bogus" in capsys.readouterr().err


def test_missing_artifact_exits_2(tiny, tmp_path, capsys):
    assert main(["embed", "--config", tiny, "--output-dir", str(tmp_path)]) == 2
    assert "cyclecl train" in capsys.readouterr().err
    assert main(["train", "--config", tiny, "--output-dir", str(tmp_path)]) == 2
    assert "cyclecl gen" in capsys.readouterr().err
    assert main(["show-config", "--config", str(tmp_path / "nope.json")]) == 2


def test_numeric_failure_exits_3(tiny, monkeypatch):
    def boom(cfg, seed):
        raise NumericError("loss is nan")

    monkeypatch.setitem(__import__("cyclecl.cli").cli.PER_SEED, "gen", boom)
    assert main(["gen", "--config", tiny]) == 3


def test_overrides():
    cfg = ex.load_config(None, ["train.miner.strategy=topk", "train.lr=0.001", "diag.videos=[\"test_001\"]"])
    assert cfg["train"]["miner"]["strategy"] == "topk"
    assert cfg["train"]["lr"] == 0.001
    assert cfg["diag"]["videos"] == ["test_001"]
    with pytest.raises(ConfigError):
        ex.load_config(None, ["train.miner.strategy=furthest"])
    with pytest.raises(ConfigError):
        ex.parse_override("no-equals-sign")
    # result-irrelevant keys leave the hash unchanged
    assert ex.config_hash(ex.load_config(None, ["output_dir=elsewhere", "n_jobs=4"])) == ex.config_hash(ex.default_config())
    assert ex.config_hash(cfg) != ex.config_hash(ex.default_config())


def test_step_by_step_matches_run(tiny, tmp_path, capsys):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    for cmd in ("gen", "train", "embed", "eval", "anomaly", "diag"):
        assert main([cmd, "--config", tiny, "--output-dir", a]) == 0, cmd
    assert main(["run", "--config", tiny, "--output-dir", b]) == 0
    for name in ("metrics.json", "embeddings_test.csv", "checkpoint.json", "train_log.csv",
                 "anomaly/score_trace.csv", "diag/summary.csv"):
        assert filecmp.cmp(os.path.join(a, "seed_0", name), os.path.join(b, "seed_0", name), shallow=False), name
    agg = json.loads(open(os.path.join(b, "metrics.json")).read())
    assert set(agg["f1"]) == {"median", "min", "max"}
    assert set(agg["anomaly"]) == {"raw_nn_distance", "raw_lof", "cycle_nn_distance", "cycle_lof"}
    assert os.path.exists(os.path.join(b, "seed_0", "baseline_frozen", "pr_curve.csv"))


def test_diag_outputs(tiny, tmp_path):
    out = str(tmp_path)
    assert main(["run", "--config", tiny, "--output-dir", out]) == 0
    with open(os.path.join(out, "seed_0", "diag", "summary.csv")) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["anomalous"] for r in rows] == ["0", "1"]
    vid = rows[0]["video_id"]
    tsm = open(os.path.join(out, "seed_0", "diag", f"tsm_{vid}.csv")).read().splitlines()
    assert len(tsm) == 120 and len(tsm[0].split(",")) == 120


def test_ablate_shape(tiny, tmp_path):
    out = str(tmp_path)
    rc = main(["ablate", "--config", tiny, "--output-dir", out, "--seeds", "0,1",
               "--axis", "head_variant", "--values", "k3_max,k1_mean"])
    assert rc == 0
    with open(os.path.join(out, "ablation_head_variant", "ablation.csv")) as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["value"], r["seed"]) for r in rows] == [("k3_max", "0"), ("k3_max", "1"), ("k1_mean", "0"), ("k1_mean", "1")]
    assert all(r["status"] == "ok" for r in rows)
    with open(os.path.join(out, "ablation_head_variant", "ablation_summary.csv")) as fh:
        summary = list(csv.DictReader(fh))
    assert [s["n_ok"] for s in summary] == ["2", "2"]


def test_ablate_rejects_bad_grid(tiny, tmp_path):
    assert main(["ablate", "--config", tiny, "--output-dir", str(tmp_path),
                 "--axis", "head_variant", "--values", "k9_max"]) == 1
    assert not os.path.exists(tmp_path / "ablation_head_variant")
