import json

import pytest
from click.testing import CliRunner

from psrlab.cli import build_behavior, build_env, main
from psrlab.policies import UniformActionSeqPolicy


ONLINE_CONFIG = {
    "env": {
        "builtin": "random_revealing",
        "params": {"seed": 1, "n_states": 2, "n_obs": 3, "n_actions": 2, "horizon": 2},
    },
    "candidates": {"mode": "dithered", "seed": 5, "n": 8, "scale": 0.03},
    "seeds": [0],
    "online": {
        "max_iterations": 80,
        "epsilon": 0.2,
        "delta": 0.1,
        "p_min": 1e-09,
        "beta": 5.0,
        "lambda": 1.0,
        "alpha": 0.5,
    },
}

OFFLINE_CONFIG = {
    "env": {"builtin": "near_tie"},
    "candidates": {"mode": "include_true"},
    "behavior": {"type": "uniform_action_seq", "sequences": [[], [1], [1, 0], [1, 1]]},
    "seeds": [0, 1],
    "offline": {"n_episodes": 60, "p_min": 1e-12, "beta": 5.0, "lambda": 0.5, "alpha": 1.6},
}


@pytest.fixture()
def runner():
    return CliRunner()


def test_gen_env_round_trip(tmp_path, runner):
    out = tmp_path / "env.json"
    result = runner.invoke(
        main, ["gen-env", "--name", "tiger", "--params", '{"horizon": 2}', "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    env = build_env({"path": str(out)})
    assert env.n_states == 2 and env.space.horizon == 2


def test_run_online_outputs(tmp_path, runner):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(ONLINE_CONFIG))
    out = tmp_path / "out"
    result = runner.invoke(main, ["run-online", "--config", str(cfg), "--out", str(out)])
    assert result.exit_code == 0, result.output
    logs = (out / "logs_seed0.csv").read_text().splitlines()
    assert logs[0] == "k,ucb_value,feasible_size,candidate_id"
    summary = json.loads((out / "summary_seed0.json").read_text())
    assert summary["seed"] == 0
    assert set(summary["params"]) >= {"p_min", "beta", "lambda", "alpha"}
    if summary["terminated"]:
        assert (out / "model_seed0.json").exists()
        assert (out / "policy_seed0.json").exists()
        assert summary["gap"] is not None


def test_run_online_auto_params(tmp_path, runner):
    cfg_data = json.loads(json.dumps(ONLINE_CONFIG))
    cfg_data["online"] = {
        "max_iterations": 4,
        "epsilon": 0.2,
        "delta": 0.1,
        "auto_params": True,
        "c_theory": 0.01,
    }
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(cfg_data))
    out = tmp_path / "out"
    result = runner.invoke(main, ["run-online", "--config", str(cfg), "--out", str(out)])
    assert result.exit_code == 0, result.output
    summary = json.loads((out / "summary_seed0.json").read_text())
    assert summary["params"]["c_theory"] == 0.01
    assert summary["params"]["lambda"] > 0


def test_run_offline_outputs(tmp_path, runner):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(OFFLINE_CONFIG))
    out = tmp_path / "out"
    result = runner.invoke(main, ["run-offline", "--config", str(cfg), "--out", str(out)])
    assert result.exit_code == 0, result.output
    rows = (out / "results.csv").read_text().splitlines()
    assert rows[0] == "K,seed,gap,lcb_value,iota,c_infinity"
    assert len(rows) == 3
    summary = json.loads((out / "summary_seed1.json").read_text())
    assert summary["K"] == 60


def test_sweep_offline_medians(tmp_path, runner):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(OFFLINE_CONFIG))
    out = tmp_path / "out"
    result = runner.invoke(
        main,
        ["sweep-offline", "--config", str(cfg), "--out", str(out), "--k-list", "30,60", "--seeds", "3"],
    )
    assert result.exit_code == 0, result.output
    medians = json.loads((out / "medians.json").read_text())
    assert set(medians) == {"30", "60"}


def test_verify_cli_exit_codes(runner):
    result = runner.invoke(main, ["verify", "--suite", "lemmas", "--seeds", "10"])
    assert result.exit_code == 0, result.output
    assert "PASS lemmas/tv-hellinger" in result.output


def test_report_command(tmp_path, runner):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(OFFLINE_CONFIG))
    out = tmp_path / "out"
    runner.invoke(main, ["run-offline", "--config", str(cfg), "--out", str(out)])
    result = runner.invoke(main, ["report", "--out", str(out)])
    assert result.exit_code == 0
    assert "K=60" in result.output


def test_build_behavior_variants(reference_env):
    assert isinstance(build_behavior("uniform", reference_env.space), UniformActionSeqPolicy)
    pol = build_behavior({"type": "uniform_action_seq", "sequences": [[0], [1]]}, reference_env.space)
    assert pol.sequences == ((0,), (1,))
