import csv
import json

import numpy as np
import pytest

from neurostrike import cli, qnet
from neurostrike.cli import main


@pytest.fixture(scope="module")
def weights_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("weights") / "weights.txt"
    qnet.save_weights(qnet.init_network(1), path)
    return str(path)


def test_missing_subcommand_is_usage_error(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err.lower()


def test_unknown_flag_rejected(weights_file, tmp_path):
    assert main(["translate", "--weights", weights_file, "--bogus"]) == 2


def test_missing_out_dir_is_usage_error(weights_file, monkeypatch):
    monkeypatch.delenv("NEUROSTRIKE_OUT", raising=False)
    assert main(["translate", "--weights", weights_file]) == 2


def test_env_out_dir_fallback(weights_file, tmp_path, monkeypatch):
    monkeypatch.setenv("NEUROSTRIKE_OUT", str(tmp_path / "envout"))
    assert main(["translate", "--weights", weights_file]) == 0
    assert (tmp_path / "envout" / "topology.csv").exists()
    assert (tmp_path / "envout" / "manifest.txt").exists()


def test_translate_outputs(weights_file, tmp_path):
    out = tmp_path / "t"
    assert main(["translate", "--weights", weights_file, "--out-dir", str(out)]) == 0
    with open(out / "topology.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5472
    assert set(rows[0]) == {"pre", "post", "weight_mV"}
    manifest = (out / "manifest.txt").read_text()
    assert "subcommand=translate" in manifest
    assert "n_synapses=5472" in manifest


def test_run_bio_domain_error_exit_1(weights_file, tmp_path, capsys):
    rc = main([
        "run-bio", "--weights", weights_file, "--out-dir", str(tmp_path / "x"),
        "--attack", "jam", "--n-pos", "28",
    ])
    assert rc == 1
    assert "error" in capsys.readouterr().err.lower()


def test_run_bio_and_export_raster(weights_file, tmp_path):
    base_dir = tmp_path / "base"
    atk_dir = tmp_path / "atk"
    assert main(["run-bio", "--weights", weights_file, "--out-dir", str(base_dir)]) == 0
    assert main([
        "run-bio", "--weights", weights_file, "--out-dir", str(atk_dir),
        "--attack", "jam", "--n-neurons", "50", "--first-pos", "1", "--n-pos", "27",
    ]) == 0
    for d in (base_dir, atk_dir):
        assert (d / "spikes.csv").exists()
        assert (d / "metrics.txt").exists()
    base_metrics = dict(
        line.split("=") for line in (base_dir / "metrics.txt").read_text().splitlines()
    )
    atk_metrics = dict(
        line.split("=") for line in (atk_dir / "metrics.txt").read_text().splitlines()
    )
    assert int(atk_metrics["n_spikes"]) < int(base_metrics["n_spikes"])

    raster_dir = tmp_path / "raster"
    rc = main([
        "export-raster", "--attacked", str(atk_dir / "spikes.csv"),
        "--baseline", str(base_dir / "spikes.csv"), "--out-dir", str(raster_dir),
    ])
    assert rc == 0
    with open(raster_dir / "raster.csv", newline="") as fh:
        tags = {row["tag"] for row in csv.DictReader(fh)}
    assert "suppressed" in tags


def test_run_bio_deterministic(weights_file, tmp_path):
    d1, d2 = tmp_path / "r1", tmp_path / "r2"
    args = ["run-bio", "--weights", weights_file, "--attack", "flo",
            "--n-neurons", "20", "--first-pos", "3", "--vi", "40"]
    assert main(args + ["--out-dir", str(d1)]) == 0
    assert main(args + ["--out-dir", str(d2)]) == 0
    assert (d1 / "spikes.csv").read_bytes() == (d2 / "spikes.csv").read_bytes()


def test_run_cnn(weights_file, tmp_path):
    out = tmp_path / "cnn"
    rc = main([
        "run-cnn", "--weights", weights_file, "--out-dir", str(out),
        "--attack", "flo", "--n-neurons", "10", "--first-pos", "5",
        "--importance", "60",
    ])
    assert rc == 0
    text = (out / "episode.txt").read_text()
    assert text.startswith("steps=")
    assert "trajectory=" in text


def test_sweep_flo_with_config_override(weights_file, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "neuron_counts": [4],
        "positions": [1],
        "amplitudes": [[40.0, 60.0]],
        "executions": 2,
    }))
    out = tmp_path / "sweep"
    rc = main([
        "sweep-flo", "--weights", weights_file, "--out-dir", str(out),
        "--config", str(cfg_path),
    ])
    assert rc == 0
    with open(out / "results.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4  # 1 cell x 2 executions x 2 scenarios
    manifest = (out / "manifest.txt").read_text()
    assert "neuron_counts=(4,)" in manifest


def test_report_from_results(tmp_path):
    from neurostrike import experiments as ex

    rows = []
    rng = np.random.default_rng(0)
    for n in (5, 35):
        for pos in (1, 14, 27):
            spikes = 1000 - 3 * n - 10 * (27 - pos) + int(rng.integers(0, 5))
            rows.append(ex.RunResult(
                scenario="bio", attack_kind="flo", n_neurons=n, position=pos,
                amplitude=40.0, execution_index=0, target_set_seed=1,
                n_spikes=spikes, dispersion_pct=100.0 - spikes / 20,
            ))
            rows.append(ex.RunResult(
                scenario="cnn", attack_kind="flo", n_neurons=n, position=pos,
                amplitude=60.0, execution_index=0, target_set_seed=1,
                steps=26 + n + (27 - pos), success=True,
            ))
    results_path = tmp_path / "results.csv"
    ex.persist(rows, results_path)
    report_dir = tmp_path / "report"
    rc = main([
        "report", "--results", str(results_path),
        "--kind", "flo", "--out-dir", str(report_dir),
    ])
    assert rc == 0
    with open(report_dir / "correlation.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["feature", "position", "n_spikes", "dispersion_pct", "steps", "n_neurons"]
    assert len(rows) == 6


def test_manifest_lists_config(weights_file, tmp_path):
    out = tmp_path / "m"
    assert main(["translate", "--weights", weights_file, "--out-dir", str(out)]) == 0
    manifest = dict(
        line.split("=", 1) for line in (out / "manifest.txt").read_text().splitlines()
    )
    assert manifest["subcommand"] == "translate"
    assert "package_version" in manifest
    assert manifest["weights"] == weights_file
