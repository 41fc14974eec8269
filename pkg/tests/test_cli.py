"""End-to-end runs of every CLI subcommand in temporary directories."""

import json
import os

import numpy as np
import pytest

from robust_dispatch.cli import load_config, main

CONFIG = {
    "n": 2,
    "tau": 2,
    "grid": {"bbox": [0.0, 0.0, 2.0, 1.0], "rows": 1, "cols": 2},
    "m": 4.0,
    "fleet": [7.0, 5.0],
    "alpha": 0.1,
    "beta": 10.0,
    "epsilon": 0.25,
    "n_boot": 80,
    "policy": "robust_soc",
    "split_ratio": 0.5,
    "steps": 3,
    "epsilons": [0.2, 0.4],
    "alphas": [1.0, 0.5],
    "alpha_demand": [4.0, 5.0, 4.0, 5.0],
    "generator": {
        "n": 2,
        "tau": 2,
        "t": 0,
        "n_samples": 30,
        "components": [
            {
                "label": "all",
                "weight": 1.0,
                "mean": [4.0, 5.0, 4.0, 5.0],
                "cov": 0.3,
            }
        ],
    },
}

TRIPS_CSV = """date,pickup_time,dropoff_time,pickup_lon,pickup_lat,dropoff_lon,dropoff_lat
2024-03-01,00:10:00,00:25:00,0.5,0.5,1.5,0.5
2024-03-01,00:40:00,01:05:00,1.5,0.5,0.5,0.5
2024-03-01,01:10:00,01:20:00,1.5,0.5,1.5,0.5
2024-03-02,00:30:00,00:45:00,0.5,0.5,0.5,0.5
2024-03-02,02:00:00,02:30:00,1.5,0.5,0.5,0.5
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(CONFIG), encoding="utf-8")
    return str(path)


@pytest.fixture
def samples_dir(tmp_path, config_path):
    out = tmp_path / "samples"
    assert main(["synth", "--config", config_path, "--seed", "1",
                 "--out", str(out)]) == 0
    return str(out)


def read_json(directory, name="summary.json"):
    with open(os.path.join(directory, name), encoding="utf-8") as fh:
        return json.load(fh)


def tree_bytes(directory):
    """Map of relative path -> file bytes for a whole directory."""
    out = {}
    for root, _, files in os.walk(directory):
        for name in files:
            path = os.path.join(root, name)
            rel = os.path.relpath(path, directory)
            with open(path, "rb") as fh:
                out[rel] = fh.read()
    return out


def test_load_config_requires_core_keys(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text(json.dumps({"n": 2, "tau": 1}), encoding="utf-8")
    with pytest.raises(ValueError, match="missing required key"):
        load_config(str(path))


def test_ingest(tmp_path, config_path):
    trips = tmp_path / "trips.csv"
    trips.write_text(TRIPS_CSV, encoding="utf-8")
    out = tmp_path / "ingested"
    assert main(["ingest", "--config", config_path, "--seed", "0",
                 "--out", str(out), "--trips", str(trips)]) == 0
    summary = read_json(out)
    assert summary["command"] == "ingest"
    assert summary["trips"] == 5
    assert summary["skipped"] == 0
    transition = read_json(out, "transition.json")
    P = np.array(transition["P"])
    np.testing.assert_allclose(P.sum(axis=1), np.ones(2), atol=1e-12)
    archives = [f for f in os.listdir(out) if f.startswith("samples_")]
    assert archives


def test_synth_writes_archive(tmp_path, config_path, samples_dir):
    files = os.listdir(samples_dir)
    assert "samples_t000_all.csv" in files
    summary = read_json(samples_dir)
    assert summary["n_samples"] == 30


def test_build_sets(tmp_path, config_path, samples_dir):
    out = tmp_path / "sets"
    assert main(["build-sets", "--config", config_path, "--seed", "2",
                 "--out", str(out), "--samples", samples_dir]) == 0
    summary = read_json(out)
    assert summary["s_index"] >= 1
    assert summary["box_width"] > 0
    assert summary["soc_gamma1"] >= 0
    box_text = (out / "box.txt").read_text(encoding="utf-8")
    soc_text = (out / "soc.txt").read_text(encoding="utf-8")
    assert box_text.startswith("type box")
    assert soc_text.startswith("type soc")


def test_solve_once_from_samples(tmp_path, config_path, samples_dir):
    out = tmp_path / "solved"
    assert main(["solve-once", "--config", config_path, "--seed", "3",
                 "--out", str(out), "--samples", samples_dir]) == 0
    summary = read_json(out)
    assert summary["status"] == "optimal"
    assert summary["objective"] > 0
    text = (out / "solution.txt").read_text(encoding="utf-8")
    assert text.startswith("format dispatch-solution-v1")


def test_solve_once_from_serialized_set(tmp_path, config_path, samples_dir):
    sets_dir = tmp_path / "sets"
    main(["build-sets", "--config", config_path, "--seed", "2",
          "--out", str(sets_dir), "--samples", samples_dir])
    out = tmp_path / "solved_set"
    assert main(["solve-once", "--config", config_path, "--seed", "3",
                 "--out", str(out), "--set", str(sets_dir / "box.txt")]) == 0
    assert read_json(out)["status"] == "optimal"


def test_simulate(tmp_path, config_path, samples_dir):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", config_path, "--seed", "4",
                 "--out", str(out), "--samples", samples_dir]) == 0
    summary = read_json(out)
    assert summary["steps"] == 3
    with open(out / "steps.csv", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    assert len(lines) == 1 + 3  # header + one row per step


def test_cross_validate(tmp_path, config_path, samples_dir):
    out = tmp_path / "cv"
    assert main(["cross-validate", "--config", config_path, "--seed", "5",
                 "--out", str(out), "--samples", samples_dir]) == 0
    summary = read_json(out)
    assert "nonrobust" in summary and "robust_soc" in summary
    assert summary["n_test"] >= 1
    with open(out / "test_samples.csv", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    assert header == [
        "sample",
        "cost_nonrobust",
        "cost_robust_soc",
        "mismatch_nonrobust",
        "mismatch_robust_soc",
    ]


def test_sweep_epsilon(tmp_path, config_path, samples_dir):
    out = tmp_path / "eps"
    assert main(["sweep-epsilon", "--config", config_path, "--seed", "6",
                 "--out", str(out), "--samples", samples_dir]) == 0
    summary = read_json(out)
    rows = summary["rows"]
    assert rows[0]["policy"] == "nonrobust"
    assert rows[0]["epsilon"] is None  # nan encodes as null
    assert [r["epsilon"] for r in rows[1:]] == [0.2, 0.4]


def test_sweep_alpha(tmp_path, config_path):
    out = tmp_path / "alpha"
    assert main(["sweep-alpha", "--config", config_path, "--seed", "7",
                 "--out", str(out)]) == 0
    summary = read_json(out)
    assert [r["alpha"] for r in summary["rows"]] == [1.0, 0.5]
    with open(out / "alpha_sweep.csv", encoding="utf-8") as fh:
        assert fh.readline().strip() == "alpha,optimal_mismatch"


def test_repeat_runs_are_byte_identical(tmp_path, config_path, samples_dir):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / f"run_{tag}"
        assert main(["cross-validate", "--config", config_path, "--seed", "9",
                     "--out", str(out), "--samples", samples_dir]) == 0
        outs.append(tree_bytes(out))
    assert outs[0] == outs[1]


def test_unknown_command_rejected(capsys):
    with pytest.raises(SystemExit):
        main(["frobnicate"])
    capsys.readouterr()
