import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from ascluster import __version__
from ascluster.cli import (
    ARTIFACTS,
    EXIT_CONFIG,
    EXIT_INPUT,
    EXIT_NUMERICAL,
    METRICS_SCHEMA,
    effective_threads,
    main,
    read_assignments,
    write_assignments,
)


def inputs(d):
    return ["--numeric", str(d / "numeric.csv"), "--text", str(d / "text_counts.csv"),
            "--lexicon", str(d / "lexicon.txt"), "--constraints", str(d / "constraints.json")]


@pytest.fixture(scope="module")
def cluster_run(bundle_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["cluster", *inputs(bundle_dir), "--out", str(out)]) == 0
    return out


def rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------- cluster

def test_cluster_writes_every_artifact(cluster_run):
    for name in ARTIFACTS:
        assert (cluster_run / name).is_file(), name
    metrics = json.loads((cluster_run / "metrics.json").read_text())
    assert metrics["schema"] == METRICS_SCHEMA
    for key in ("silhouette", "intra_inter", "chc", "dbi", "lambda", "k", "candidates", "cluster_sizes"):
        assert key in metrics
    assert metrics["k"] == 3 and metrics["n"] == 150
    assert sum(metrics["cluster_sizes"]) == 150
    grid = rows(cluster_run / "lambda_grid.csv")
    assert len(grid) == 22
    ids, labels = read_assignments(cluster_run / "assignments.csv")
    assert len(ids) == 150 and set(labels.tolist()) == {1, 2, 3}
    assert rows(cluster_run / "assignments.csv")[0] == ["id", "label"]


def test_cluster_matches_truth(cluster_run, bundle_dir, tmp_path, capsys):
    assert main(["eval", "--assignments", str(cluster_run / "assignments.csv"),
                 "--truth", str(bundle_dir / "labels.csv"), "--numeric", str(bundle_dir / "numeric.csv"),
                 "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "eval.json").read_text())
    assert report["ari"] == 1.0
    assert set(report["numeric_space"]) == {"silhouette", "intra_inter", "chc", "dbi"}
    assert rows(tmp_path / "summary.csv")[0][0] == "variable"


def test_config_echo_reproduces_run(cluster_run, tmp_path):
    echo = json.loads((cluster_run / "config.echo").read_text())
    assert echo["command"] == "cluster" and echo["version"] == __version__
    assert main(["cluster", "--config", str(cluster_run / "config.echo"), "--out", str(tmp_path)]) == 0
    for name in ("assignments.csv", "metrics.json", "lambda_grid.csv", "k_selection.csv"):
        assert (tmp_path / name).read_bytes() == (cluster_run / name).read_bytes(), name


def test_flags_override_config(cluster_run, tmp_path):
    assert main(["cluster", "--config", str(cluster_run / "config.echo"), "--lambda", "0.65",
                 "--method", "kmedoids", "--out", str(tmp_path)]) == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["lambda"] == 0.65
    echo = json.loads((tmp_path / "config.echo").read_text())
    assert echo["settings"]["method"] == "kmedoids"


# ---------------------------------------------------------------- other subcommands

def test_optimize_lambda(bundle_dir, tmp_path, capsys):
    assert main(["optimize-lambda", *inputs(bundle_dir), "--out", str(tmp_path)]) == 0
    assert "feasible=true" in capsys.readouterr().out
    grid = rows(tmp_path / "lambda_grid.csv")
    assert len(grid) == 22 and grid[1][0] == "0.00" and grid[-1][0] == "1.00"


def test_select_k(bundle_dir, tmp_path, capsys):
    assert main(["select-k", *inputs(bundle_dir), "--out", str(tmp_path)]) == 0
    assert "k=3" in capsys.readouterr().out
    chosen = [r for r in rows(tmp_path / "k_selection.csv")[1:] if r[-1] == "1"]
    assert len(chosen) == 1 and chosen[0][0] == "3"


@pytest.mark.parametrize("modality", ["numeric", "text"])
def test_ablate(bundle_dir, tmp_path, modality):
    assert main(["ablate", "--modality", modality, *inputs(bundle_dir), "--window", "10",
                 "--out", str(tmp_path)]) == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["modality"] == modality and metrics["lambda"] is None


def test_profile(bundle_dir, tmp_path):
    assert main(["profile", "--text", str(bundle_dir / "text_counts.csv"), "--lexicon",
                 str(bundle_dir / "lexicon.txt"), "--assignments", str(bundle_dir / "labels.csv"),
                 "--out", str(tmp_path)]) == 0
    table = rows(tmp_path / "profile.csv")
    assert table[0] == ["term", "cluster_1", "cluster_2", "cluster_3", "total", "dominant"]
    for r in table[1:]:
        if int(r[4]) > 0:
            assert sum(float(v) for v in r[1:4]) == pytest.approx(1.0, abs=1e-5)


def test_eval_compare(cluster_run, bundle_dir, tmp_path):
    ablated = tmp_path / "num"
    assert main(["ablate", "--modality", "numeric", *inputs(bundle_dir), "--out", str(ablated)]) == 0
    assert main(["eval", "--assignments", str(cluster_run / "assignments.csv"),
                 "--compare", str(cluster_run), str(ablated), "--out", str(tmp_path)]) == 0
    runs = json.loads((tmp_path / "eval.json").read_text())["runs"]
    assert runs[0]["silhouette_ratio_to_first"] == 1.0
    assert runs[1]["modality"] == "numeric"


def test_synth_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["synth", "--seed", "3", "--out", str(a)]) == 0
    assert main(["synth", "--seed", "3", "--out", str(b)]) == 0
    for name in ("numeric.csv", "text_counts.csv", "lexicon.txt", "constraints.json", "labels.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert len(rows(a / "numeric.csv")) == 151


def test_synth_bundle_feeds_cluster(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--clusters", "4", "--n", "160", "--out", str(data)]) == 0
    assert sorted(p.name for p in data.iterdir()) == [
        "constraints.json", "labels.csv", "lexicon.txt", "numeric.csv", "text_counts.csv"]
    assert main(["cluster", *inputs(data), "--out", str(tmp_path / "run")]) == 0
    assert len(list((tmp_path / "run").iterdir())) == 7


def test_assignment_files_are_one_based(tmp_path):
    write_assignments(["a", "b", "c"], np.array([0, 2, 1]), tmp_path / "x.csv")
    assert rows(tmp_path / "x.csv")[1:] == [["a", "1"], ["b", "3"], ["c", "2"]]
    ids, lab = read_assignments(tmp_path / "x.csv")
    assert ids == ("a", "b", "c") and lab.tolist() == [1, 3, 2]


# ---------------------------------------------------------------- exit codes

def test_missing_file_is_input_error(bundle_dir, tmp_path, capsys):
    args = inputs(bundle_dir)
    args[5] = str(tmp_path / "nope.txt")
    assert main(["cluster", *args, "--out", str(tmp_path)]) == EXIT_INPUT
    assert "nope.txt" in capsys.readouterr().err


@pytest.mark.parametrize("extra", [["--lambda-step", "0.3"], ["--lambda", "1.2"], ["--window", "2"],
                                   ["--bogus"], ["--method", "dbscan"]])
def test_bad_settings_are_config_errors(bundle_dir, tmp_path, extra):
    with pytest.raises(SystemExit) as info:
        rc = main(["cluster", *inputs(bundle_dir), *extra, "--out", str(tmp_path)])
        raise SystemExit(rc)
    assert info.value.code == EXIT_CONFIG


def test_synth_rejects_tiny_clusters(tmp_path):
    assert main(["synth", "--n", "3", "--clusters", "2", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_constant_features_are_numerical_failures(bundle_dir, tmp_path, capsys):
    table = rows(bundle_dir / "numeric.csv")
    flat = tmp_path / "flat.csv"
    with open(flat, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(table[0])
        for r in table[1:]:
            w.writerow([r[0], *["1.0"] * (len(r) - 1)])
    args = inputs(bundle_dir)
    args[1] = str(flat)
    assert main(["cluster", *args, "--out", str(tmp_path)]) == EXIT_NUMERICAL
    assert "step 1" in capsys.readouterr().err


def test_threads_are_capped():
    assert effective_threads(1) == 1
    assert 1 <= effective_threads(64) <= 64


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ascluster", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and __version__ in proc.stdout
