import csv
import hashlib

import pytest
import yaml

from mtvf.cli import EXIT_OK, EXIT_USAGE, Experiment, load_config, run
from mtvf.solvers import model_from_tables, save_model

SMALL = {
    "seed": 3,
    "num_tasks": 2,
    "budgets": [60],
    "episode_cap": 1,
    "methods": ["st-fqi", "mt-fqi-aso"],
    "planner": {"max_outer_iters": 40, "max_policy_iters": 5},
    "solvers": {"aso": {"d_shared": 3, "max_inner_iters": 20, "sparsity_weight": 1e-2}},
    "rollout": {"num_starts": 5},
    "transfer": {"num_tasks": 1, "budgets": [40], "source_budget": 60, "episode_cap": 1},
    "options": {"budgets": [30], "exit_budgets": [10], "source_budget": 60, "episode_cap": 1},
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return path


def call(*argv):
    return run([str(a) for a in argv])


def test_generate_writes_manifest_with_checksums(tmp_path, config):
    out = tmp_path / "run"
    assert call("generate", "--config", config, "--out", out) == EXIT_OK
    with open(out / "manifest.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert list(rows[0]) == ["file", "task_id", "goal", "budget", "sha256"]
    for r in rows:
        assert hashlib.sha256((out / r["file"]).read_bytes()).hexdigest() == r["sha256"]


def test_seed_flag_overrides_config(tmp_path, config):
    a, b = tmp_path / "a", tmp_path / "b"
    call("generate", "--config", config, "--out", a)
    call("generate", "--config", config, "--out", b, "--seed", 99)
    assert (a / "manifest.csv").read_bytes() != (b / "manifest.csv").read_bytes()


def test_missing_layout_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"layout": str(tmp_path / "nope.txt")}))
    assert call("generate", "--config", cfg, "--out", tmp_path / "o") == EXIT_USAGE
    assert "layout file not found" in capsys.readouterr().err


def test_unknown_method_is_usage_error(tmp_path, config, capsys):
    out = tmp_path / "run"
    call("generate", "--config", config, "--out", out)
    assert call("train", "--config", config, "--out", out, "--method", "mt-fqi-magic") == EXIT_USAGE
    assert "unknown method" in capsys.readouterr().err


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"budgetz": [1]}))
    assert call("oracle", "--config", cfg, "--out", tmp_path / "o") == EXIT_USAGE


def test_train_without_data_is_usage_error(tmp_path, config):
    assert call("train", "--config", config, "--out", tmp_path / "empty") == EXIT_USAGE


def test_transfer_from_single_task_model_is_usage_error(tmp_path, config, capsys):
    out = tmp_path / "run"
    call("generate", "--config", config, "--out", out)
    assert call("train", "--config", config, "--out", out, "--method", "st-fqi") == EXIT_OK
    model = out / "models" / "st-fqi_b60.model"
    assert call("transfer", "--config", config, "--out", out, "--model", model) == EXIT_USAGE
    assert "no shared subspace" in capsys.readouterr().err


def test_evaluate_oracle_as_model(tmp_path, config):
    out = tmp_path / "run"
    exp = Experiment(load_config(config), out)
    model = model_from_tables([o.q_star for o in exp.oracles], [t.task_id for t in exp.tasks])
    out.mkdir()
    save_model(model, out / "oracle.model")
    assert call("evaluate", "--config", config, "--out", out, out / "oracle.model") == EXIT_OK
    with open(out / "eval" / "oracle.csv") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows[:-2]:
        assert float(r["v_emp_norm"]) == 1.0
        assert float(r["q_dist"]) == 0.0


def test_evaluate_missing_model(tmp_path, config):
    assert call("evaluate", "--config", config, "--out", tmp_path, tmp_path / "x.model") == EXIT_USAGE


def pipeline(config, out):
    for cmd in ("generate", "train", "oracle"):
        assert call(cmd, "--config", config, "--out", out) == EXIT_OK
    for m in SMALL["methods"]:
        assert call("evaluate", "--config", config, "--out", out, out / "models" / f"{m}_b60.model") == EXIT_OK
    assert call("transfer", "--config", config, "--out", out) == EXIT_OK
    assert call("options", "--config", config, "--out", out) == EXIT_OK
    return {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*.csv"))}


def test_pipeline_reruns_are_byte_identical(tmp_path, config):
    a = pipeline(config, tmp_path / "a")
    b = pipeline(config, tmp_path / "b")
    assert a == b
    names = {p.as_posix() for p in a}
    assert {"manifest.csv", "oracle.csv", "transfer.csv", "options_rooms.csv", "options_exit.csv"} <= names
    assert "eval/mt-fqi-aso_b60.csv" in names
    assert "traces/st-fqi_b60.csv" in names


def test_parallel_training_matches_serial(tmp_path, config):
    a, b = tmp_path / "a", tmp_path / "b"
    for out, jobs in ((a, 1), (b, 2)):
        call("generate", "--config", config, "--out", out)
        assert call("train", "--config", config, "--out", out, "--jobs", jobs) == EXIT_OK
    for m in SMALL["methods"]:
        rel = f"models/{m}_b60.model"
        assert (a / rel).read_bytes() == (b / rel).read_bytes()
