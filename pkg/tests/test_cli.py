import json
import os
import subprocess
import sys

import numpy as np
import pytest

from longirad.cli import COMMANDS, bundled_config, load_config, main, substream_seed
from longirad.errors import ConfigError

STAGES = ("simulate", "register", "match", "features", "delta", "fit-lasso", "bess", "importance", "jointmodel",
          "report")

SMALL_RUN = """
seed = 3

[simulate]
n_patients = 24
lesions_min = 2
lesions_max = 2
jitter_mm = 1.0
volume_size = 40
spacing_mm = 3.0

[register]
cohort = "runs/simulate/cohort"
finest_level = 2
max_iter = 150

[match]
cohort = "runs/simulate/cohort"
transforms = "runs/register/transforms.json"

[features]
cohort = "runs/simulate/cohort"
tracks = "runs/match/tracks.csv"

[delta]
cohort = "runs/simulate/cohort"
features = "runs/features/features.csv"

[fit-lasso]
designs = "runs/delta/designs.csv"
n_lambda = 8
folds = 3
bootstrap = 30

[bess]
designs = "runs/delta/designs.csv"
size = 2
sequential = false

[importance]
designs = "runs/delta/designs.csv"
min_size = 2
max_size = 2

[jointmodel]
cohort = "runs/simulate/cohort"
features = "runs/features/features.csv"
feature_list = [["shape2D_MeshSurface", "log"]]
iterations = 300
burn_in = 100
thin = 2

[report]
cohort = "runs/simulate/cohort"
features = "runs/features/features.csv"
box_features = ["shape2D_MeshSurface"]
lasso = "runs/fit-lasso"
importance = "runs/importance/importance.csv"
jointmodel = "runs/jointmodel/fit"
"""


def run_pipeline(root, threads):
    root.mkdir()
    (root / "run.toml").write_text(SMALL_RUN)
    old = os.getcwd()
    os.chdir(root)
    try:
        for stage in STAGES:
            code = main([stage, "--config", "run.toml", "--out", f"runs/{stage}", "--threads", str(threads)])
            assert code == 0, stage
    finally:
        os.chdir(old)
    return root / "runs"


def artifacts(runs):
    out = {}
    for p in sorted(runs.rglob("*")):
        if not p.is_file():
            continue
        rel = p.relative_to(runs)
        if p.name == "manifest.json":
            doc = json.loads(p.read_text())
            doc.pop("timings_s")
            out[rel] = json.dumps(doc, sort_keys=True).encode()
        else:
            out[rel] = p.read_bytes()
    return out


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("pipeline")
    return run_pipeline(base / "t1", 1), run_pipeline(base / "t2", 2)


def test_pipeline_is_thread_count_invariant(pipeline_runs):
    a, b = (artifacts(r) for r in pipeline_runs)
    assert a.keys() == b.keys()
    differ = [str(k) for k in a if a[k] != b[k]]
    assert not differ, differ


def test_every_stage_leaves_a_manifest(pipeline_runs):
    runs = pipeline_runs[0]
    for stage in STAGES:
        m = json.loads((runs / stage / "manifest.json").read_text())
        assert m["command"] == stage and m["seed"] == 3
        assert "total" in m["timings_s"]
    sim = json.loads((runs / "simulate" / "manifest.json").read_text())
    assert sim["seeds"]
    rep = json.loads((runs / "report" / "manifest.json").read_text())
    assert rep["inputs_sha256"]
    assert list((runs / "report" / "figures").rglob("*.svg"))


def test_misspelled_key_exits_one(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[fit-lasso]\ndesigns = "d.csv"\nlamda = 0.1\n')
    assert main(["fit-lasso", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "lamda" in capsys.readouterr().err


def test_override_errors_exit_one(tmp_path):
    assert main(["bess", "--out", str(tmp_path), "--set", "designs=d.csv", "--set", "size=two"]) == 1
    assert main(["bess", "--out", str(tmp_path), "--set", "designs=missing.csv"]) == 1
    assert main(["bess", "--out", str(tmp_path), "--threads", "0", "--set", "designs=d.csv"]) == 1


def test_unknown_table_rejected(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[fitlasso]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(str(cfg), "fit-lasso", [])


def test_bundled_configs_load():
    for name in ("pipeline.toml", "lasso.toml", "jointmodel.toml"):
        path = bundled_config(name)
        assert path.exists()
    cfg, seed = load_config(str(bundled_config("pipeline.toml")), "simulate", [])
    assert seed == 7 and cfg["n_patients"] == 40


def test_substreams_are_named():
    assert substream_seed(1, "a") == substream_seed(1, "a")
    assert substream_seed(1, "a") != substream_seed(1, "b")
    assert substream_seed(1, "a") != substream_seed(2, "a")


@pytest.mark.parametrize("cmd", COMMANDS)
def test_help_for_every_command(cmd):
    proc = subprocess.run([sys.executable, "-m", "longirad.cli", cmd, "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "--config" in proc.stdout


def test_usage_error_exit_code():
    proc = subprocess.run([sys.executable, "-m", "longirad.cli", "simulate"], capture_output=True, text=True)
    assert proc.returncode == 1


def test_selection_uses_lasso_training_rows(tmp_path):
    from longirad.cli import Run, _split, _training_rows
    from longirad.survival import as_design

    rng = np.random.default_rng(0)
    d = as_design(rng.normal(size=(50, 2)), rng.exponential(1, 50), (rng.uniform(size=50) < 0.6).astype(int))
    runs = [Run(cmd, {"test_fraction": 0.3}, 5, tmp_path, 1, None) for cmd in ("fit-lasso", "importance")]
    lasso_train, _ = _split(d, 0.3, runs[0].shared_stream("split"))
    vote_train = _training_rows(runs[1], d)
    assert np.array_equal(lasso_train.time, vote_train.time) and len(vote_train.time) < 50
    assert runs[1].notes["selection_rows"]["n_train"] == len(vote_train.time)
