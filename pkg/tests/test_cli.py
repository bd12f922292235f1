import csv
import json

import pytest

from gaicomm.checkpoint import load_checkpoint
from gaicomm.cli import main


@pytest.fixture(scope="module")
def trained_dir(tiny_config_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", "--config", str(tiny_config_path), "--out", str(out)]) == 0
    return out


def test_train_outputs(trained_dir):
    for name in ("model.gai1", "losses.csv", "val_losses.csv", "config.json"):
        assert (trained_dir / name).is_file()
    params, meta = load_checkpoint(trained_dir / "model.gai1")
    assert params and meta["architecture"] == "full"


def test_train_rerun_reproduces_curve(tiny_config_path, trained_dir, tmp_path):
    assert main(["train", "--config", str(tiny_config_path), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "losses.csv").read_bytes() == (trained_dir / "losses.csv").read_bytes()
    assert (tmp_path / "model.gai1").read_bytes() == (trained_dir / "model.gai1").read_bytes()


def test_seed_override_is_echoed(tiny_config_path, tmp_path):
    assert main(["train", "--config", str(tiny_config_path), "--out", str(tmp_path), "--seed", "7"]) == 0
    assert json.loads((tmp_path / "config.json").read_text())["seed"] == 7


def test_missing_config_exit_2(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_invalid_schema_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"unknown": 1}))
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_missing_required_argument_exit_2():
    assert main(["train"]) == 2


def test_sweep_snr_points(trained_dir, tmp_path):
    code = main(["sweep", "--checkpoint", str(trained_dir / "model.gai1"), "--snr", "-2:14:2", "--out", str(tmp_path)])
    assert code == 0
    with open(tmp_path / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert sorted({float(r["snr_db"]) for r in rows}) == [-2, 0, 2, 4, 6, 8, 10, 12, 14]


def test_sweep_ratio_echo(trained_dir, tmp_path, capsys):
    code = main(["sweep", "--checkpoint", str(trained_dir / "model.gai1"), "--snr", "0:0:1", "--ratios", "0.0833", "--out", str(tmp_path)])
    assert code == 0
    assert "achieved bandwidth ratio 0.0833333" in capsys.readouterr().out


def test_sweep_unknown_mode_exit_2(trained_dir, tmp_path):
    assert main(["sweep", "--checkpoint", str(trained_dir / "model.gai1"), "--mode", "bogus", "--out", str(tmp_path)]) == 2


def test_sweep_bad_checkpoint_exit_2(tmp_path):
    (tmp_path / "m.gai1").write_bytes(b"NOPE" + bytes(16))
    assert main(["sweep", "--checkpoint", str(tmp_path / "m.gai1"), "--out", str(tmp_path)]) == 2


def test_ablate_unknown_variant_exit_2(tiny_config_path, tmp_path):
    assert main(["ablate", "--config", str(tiny_config_path), "--variants", "full,bogus", "--out", str(tmp_path)]) == 2


def test_ablate_all_variants(tiny_config_path, tmp_path):
    variants = "full,gai_w,simp_att,basic_multitask,single_task"
    assert main(["ablate", "--config", str(tiny_config_path), "--variants", variants, "--out", str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("results_*.csv"))) == 5
    with open(tmp_path / "delta_summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["variant"] for r in rows} == {"full", "gai_w", "simp_att", "basic_multitask"}


def test_flops_command(tiny_config_path, tmp_path):
    assert main(["flops", "--config", str(tiny_config_path), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "flops.csv").is_file()


def test_export_weights_command(trained_dir, tmp_path):
    assert main(["export-weights", "--checkpoint", str(trained_dir / "model.gai1"), "--out", str(tmp_path)]) == 0
    with open(tmp_path / "task_node_weights.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2 * 4


def test_verify_clean_and_faulty(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "grad.pipeline" in out and "measured=" in out
    assert main(["verify", "--inject-fault"]) == 1


def test_help_documents_schema(capsys):
    assert main(["train", "--help"]) == 0
    out = capsys.readouterr().out
    assert "learning_rate" in out and "unknown keys are rejected" in out
