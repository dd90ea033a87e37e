"""
Tests for configuration loading and the command line.
"""

import json
import os.path

import pytest

from trsp_prune import cli
from trsp_prune.config import RunConfig, load_config
from trsp_prune.core.enums import GateCriterion, NormType, TokenizerMode
from trsp_prune.core.errors import (
    ConfigError,
    DataError,
    InvariantViolation,
    NumericalError,
    TrspError,
)

TINY_MODEL = ["--n-layers", "4", "--d-model", "16", "--n-heads", "2", "--max-seq-len", "16"]


def write_ini(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_defaults_load():
    """Test that the packaged defaults build a valid configuration."""
    config = load_config()
    assert config.run.seed == 0
    assert config.model.n_layers == 8
    assert config.model.ff_dim == 4 * config.model.d_model
    assert config.data.tokenizer is TokenizerMode.CHAR
    assert config.stage2.norm is NormType.L2


def test_unknown_key_is_rejected(tmp_path):
    """Test that a key outside the section's fields fails loudly."""
    path = write_ini(tmp_path / "bad.ini", "[model]\nn_layer = 4\n")
    with pytest.raises(ConfigError, match="model.n_layer"):
        load_config(path)

    path = write_ini(tmp_path / "section.ini", "[models]\nn_layers = 4\n")
    with pytest.raises(ConfigError):
        load_config(path)

    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")


def test_override_precedence(tmp_path):
    """Test defaults < user file < overrides, with derived fields following overrides."""
    path = write_ini(tmp_path / "user.ini", "[stage1]\nlambda1 = 0.1\n\n[model]\nd_model = 32\n")
    assert load_config(path).stage1.lambda1 == 0.1

    config = load_config(path, {"stage1.lambda1": 0.2, "model.d_model": 48, "run.seed": None})
    assert config.stage1.lambda1 == 0.2
    assert config.model.d_model == 48
    assert config.model.ff_dim == 192
    assert config.run.seed == 0


def test_value_coercion(tmp_path):
    """Test booleans, enums, tuples and rejected numbers from INI strings."""
    path = write_ini(
        tmp_path / "user.ini",
        "[stage1]\njoint_weights = no\ncriterion = RAW\n\n"
        "[stage2]\nnorm = L1\n\n[data]\nfractions = 0.8, 0.1, 0.1\n",
    )
    config = load_config(path)
    assert config.stage1.joint_weights is False
    assert config.stage1.criterion is GateCriterion.RAW
    assert config.stage2.norm is NormType.L1
    assert config.data.fractions == (0.8, 0.1, 0.1)

    for text in ("[stage1]\nsteps = 2.5\n", "[stage1]\njoint_weights = maybe\n"):
        with pytest.raises(ConfigError):
            load_config(write_ini(tmp_path / "bad.ini", text))


def test_run_config_dict_round_trip():
    """Test that the manifest form of a configuration rebuilds the same configuration."""
    config = load_config(overrides={"prune.ratio": 0.5, "stage2.norm": "l1"})
    assert RunConfig.from_dict(json.loads(json.dumps(config.to_dict()))) == config


def test_exit_codes_by_error_family():
    """Test the exit code of each error family."""
    assert ConfigError("x").exit_code == 2
    assert DataError("x").exit_code == 3
    assert NumericalError("matmul").exit_code == 4
    assert InvariantViolation("x").exit_code == 5
    assert TrspError("x").exit_code == 5


def test_missing_corpus_exits_with_config_error(tmp_path, capsys):
    """Test exit code 2 and a message naming the missing setting."""
    assert cli.main(["pretrain", "--out", str(tmp_path / "run")]) == 2
    assert "data.corpus" in capsys.readouterr().err


def test_short_corpus_exits_with_data_error(tmp_path):
    """Test exit code 3 for a corpus too short to train on."""
    path = tmp_path / "short.txt"
    path.write_text("abc", encoding="utf-8")
    argv = ["pretrain", "--corpus", str(path), "--out", str(tmp_path / "run"), *TINY_MODEL]
    assert cli.main(argv) == 3


def test_numerical_abort_writes_failure_manifest(tmp_path, corpus_path, monkeypatch):
    """Test exit code 4 and the failure manifest of a numerical abort."""

    def explode(inv):
        raise NumericalError("softmax", "overflow")

    monkeypatch.setitem(cli.COMMANDS, "pretrain", explode)
    out = tmp_path / "run"
    assert cli.main(["pretrain", "--corpus", str(corpus_path), "--out", str(out)]) == 4

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "failure"
    assert manifest["events"][-1]["event_type"] == "numerical_abort"
    assert manifest["events"][-1]["details"]["op"] == "softmax"


def test_pretrain_prune_eval_replay(tmp_path, corpus_path):
    """Test the command chain on a tiny model, and that replays rewrite identical checkpoints."""
    dense_dir, prune_dir, eval_dir = tmp_path / "dense", tmp_path / "prune", tmp_path / "eval"
    corpus = ["--corpus", str(corpus_path)]

    argv = ["pretrain", *corpus, "--out", str(dense_dir), "--steps", "4", "--quiet", *TINY_MODEL]
    assert cli.main(argv) == 0
    dense = dense_dir / "dense.ckpt"
    assert dense.is_file()

    argv = [
        "prune",
        *corpus,
        "--checkpoint",
        str(dense),
        "--out",
        str(prune_dir),
        "--ratio",
        "0.5",
        "--n-calibration",
        "4",
        "--stage1-steps",
        "3",
        "--stage2-steps",
        "3",
        "--quiet",
    ]
    assert cli.main(argv) == 0
    report = json.loads((prune_dir / "report.json").read_text())
    assert report["n_layers_before"] == 4
    assert report["n_layers_after"] == 2
    assert (prune_dir / "similarity.csv").is_file()

    manifest = json.loads((prune_dir / "manifest.json").read_text())
    assert manifest["command"] == "prune"
    assert manifest["status"] == "success"
    assert manifest["arguments"]["checkpoint"] == os.path.abspath(dense)
    assert manifest["config"]["prune"]["ratio"] == 0.5
    assert "calibration" in manifest["context"]["stage_seeds"]
    assert {"stage1", "stage2"} <= {e["stage"] for e in manifest["events"]}

    argv = [
        "eval",
        *corpus,
        "--checkpoint",
        str(prune_dir / "pruned.ckpt"),
        "--reference",
        str(dense),
        "--out",
        str(eval_dir),
    ]
    assert cli.main(argv) == 0
    result = json.loads((eval_dir / "eval.json").read_text())
    assert result["n_layers"] == 2
    assert result["ppl_delta"] == pytest.approx(result["ppl"] - result["reference_ppl"])

    replay_dir = tmp_path / "replay"
    assert cli.main(["replay", str(prune_dir / "manifest.json"), "--out", str(replay_dir)]) == 0
    replayed = json.loads((replay_dir / "report.json").read_text())
    assert replayed["prune_set"] == report["prune_set"]
    assert replayed["ppl"] == report["ppl"]
    assert (replay_dir / "pruned.ckpt").read_bytes() == (prune_dir / "pruned.ckpt").read_bytes()

    dense_replay = tmp_path / "dense_replay"
    assert cli.main(["replay", str(dense_dir / "manifest.json"), "--out", str(dense_replay)]) == 0
    assert (dense_replay / "dense.ckpt").read_bytes() == dense.read_bytes()
