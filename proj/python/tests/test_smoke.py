import json
import math
import os

import pytest

import pyclap


def test_schedule_endpoints_and_interior():
    assert pyclap.rho_targets(5, 0.5, 0.8) == [0.5, 0.575, 0.65, 0.725, 0.8]
    assert pyclap.rho_schedule(1, 1, 0.5, 0.8) == 0.8


def test_pearson_and_score():
    assert pyclap.pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    m = pyclap.score([0.5, 0.5], [0.0, 1.0])
    assert m["mae"] == pytest.approx(0.5)
    assert m["mse"] == pytest.approx(0.25)
    assert abs(m["r2"]) < 1e-15
    with pytest.raises(RuntimeError):
        pyclap.score([1.0, 2.0], [3.0, 3.0])


def test_closed_form_correlation():
    r = pyclap.corr_closed_form(kappa=0.5, alpha=0.5, rho=0.0, a=1.0, b=1.0)
    assert r == pytest.approx(1 / math.sqrt(2))


def test_theory_checks_pass():
    checks = pyclap.verify_theory(mc_draws=100000, residual_samples=20000)
    failed = [c["name"] for c in checks if not c["pass"]]
    assert not failed


def test_config_is_strict():
    cfg = pyclap.parse_config("[train]\nepochs = 3\n", {"objective.rho_max": "0.9"})
    assert cfg["train"]["epochs"] == 3
    assert cfg["train"]["objective"]["rho_max"] == 0.9
    with pytest.raises(ValueError, match="unknown key"):
        pyclap.parse_config("[train]\nepochz = 3\n")


def test_variant_labels():
    labels = dict(pyclap.ablation_variants())
    assert labels["no-split"] == "w/o causal–trivial split"
    assert len(labels) == 8


def test_train_run_writes_artifacts(tmp_path):
    text = f"""
[data]
n = 48
feature_dim = 4
min_nodes = 4
max_nodes = 6
motif_size = 2
[model]
depth = 2
hidden = 6
embed_dim = 5
rounds = 1
[train]
epochs = 2
batch_size = 8
[output]
dir = "{tmp_path.as_posix()}"
"""
    summary = pyclap.run("train", text)
    assert summary["ok"]
    assert (tmp_path / "checkpoint.json").exists()
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 2
    assert json.loads(lines[0])["schema_version"] == 1
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(manifest["config_hash"]) == 16
