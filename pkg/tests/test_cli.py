import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from ambivox.cli import main
from ambivox.frontend import read_wav


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, runner):
    """Full CLI pipeline on a miniature corpus, shared by the tests."""
    root = tmp_path_factory.mktemp("cli")
    corpus_dir = root / "corpus"
    res = runner.invoke(main, [
        "corpus", "build", "--out", str(corpus_dir),
        "--n-speakers", "4", "--utterances-per-speaker", "6", "--seed", "5",
    ])
    assert res.exit_code == 0, res.output
    manifest = corpus_dir / "manifest.tsv"

    cfg = root / "train.cfg"
    cfg.write_text(
        "epochs=2\nbatch_size=8\ncrop_frames=64\nbase_channels=8\n"
        "disc_channels=8\nd_z=16\nseed=9\n"
    )
    model_dir = root / "model"
    res = runner.invoke(main, [
        "train", "--manifest", str(manifest), "--out", str(model_dir),
        "--config", str(cfg),
    ])
    assert res.exit_code == 0, res.output

    attackers_dir = root / "attackers"
    res = runner.invoke(main, [
        "attackers", "train", "--manifest", str(manifest),
        "--out", str(attackers_dir), "--seed", "2",
    ])
    assert res.exit_code == 0, res.output
    return {
        "root": root, "manifest": manifest, "model": model_dir,
        "attackers": attackers_dir, "corpus": corpus_dir,
    }


def test_corpus_build_writes_manifest(workspace):
    lines = workspace["manifest"].read_text().strip().splitlines()
    assert lines[0].split("\t") == [
        "audio_path", "speaker_id", "gender", "transcript", "split"]
    assert len(lines) == 1 + 4 * 6


def test_transform_roundtrip(workspace, runner, tmp_path):
    src = next((workspace["corpus"] / "wav").rglob("*.wav"))
    out = tmp_path / "anon.wav"
    res = runner.invoke(main, [
        "transform", str(src), str(out),
        "--checkpoint", str(workspace["model"] / "checkpoint.avxc"),
        "--seed", "3",
    ])
    assert res.exit_code == 0, res.output
    wave = read_wav(out)
    assert wave.sample_rate == 16000 and len(wave.samples) > 0


def test_evaluate_and_report(workspace, runner, tmp_path):
    report_path = tmp_path / "report.json"
    res = runner.invoke(main, [
        "evaluate", "--checkpoint", str(workspace["model"] / "checkpoint.avxc"),
        "--manifest", str(workspace["manifest"]),
        "--attackers", str(workspace["attackers"]),
        "--out", str(report_path), "--seed", "1", "--label", "mini",
    ])
    assert res.exit_code == 0, res.output
    data = json.loads(report_path.read_text())
    assert data["label"] == "mini"
    assert 0.0 <= data["eer"] <= 100.0
    assert data["metadata"]["checkpoint_digest"] != "identity"

    plots = tmp_path / "plots"
    res = runner.invoke(main, [
        "report", "--in", str(report_path), "--plots", str(plots),
    ])
    assert res.exit_code == 0, res.output
    assert (plots / "table.csv").exists()
    assert (plots / "tradeoff_gr.png").exists()
    assert (plots / "tradeoff_eer.png").exists()
    assert any(plots.glob("spectrograms_*.png"))


def test_evaluate_identity_baseline(workspace, runner, tmp_path):
    report_path = tmp_path / "orig.json"
    res = runner.invoke(main, [
        "evaluate", "--manifest", str(workspace["manifest"]),
        "--attackers", str(workspace["attackers"]),
        "--out", str(report_path), "--label", "original",
    ])
    assert res.exit_code == 0, res.output
    data = json.loads(report_path.read_text())
    assert data["metadata"]["checkpoint_digest"] == "identity"


def test_exit_code_missing_asset(workspace, runner, tmp_path):
    res = runner.invoke(main, [
        "train", "--manifest", str(tmp_path / "nope.tsv"),
        "--out", str(tmp_path / "m"),
    ])
    assert res.exit_code == 3


def test_exit_code_invalid_input(workspace, runner, tmp_path):
    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("bogus_key=1\n")
    res = runner.invoke(main, [
        "train", "--manifest", str(workspace["manifest"]),
        "--out", str(tmp_path / "m"), "--config", str(bad_cfg),
    ])
    assert res.exit_code == 2


def test_exit_code_checkpoint_error(workspace, runner, tmp_path):
    bad = tmp_path / "bad.avxc"
    bad.write_bytes(b"not a container")
    src = next((workspace["corpus"] / "wav").rglob("*.wav"))
    res = runner.invoke(main, [
        "transform", str(src), str(tmp_path / "o.wav"),
        "--checkpoint", str(bad),
    ])
    assert res.exit_code == 4


def test_output_root_env(workspace, runner, tmp_path, monkeypatch):
    monkeypatch.setenv("AMBIVOX_OUTPUT_ROOT", str(tmp_path))
    src = next((workspace["corpus"] / "wav").rglob("*.wav"))
    res = runner.invoke(main, [
        "transform", str(src), "rel_out.wav",
        "--checkpoint", str(workspace["model"] / "checkpoint.avxc"),
    ])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "rel_out.wav").exists()
