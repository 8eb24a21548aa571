"""Experiment command line: environment generation, runs, sweeps, verification.

All persisted CSV/JSON artifacts are deterministic functions of the config
and seeds: fixed column orders, sorted JSON keys, shortest round-trip float
encoding, and no wall-clock content.  Timing goes to stdout only.
"""

from __future__ import annotations

import csv
import io
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from .errors import PsrLabError
from .estimation import CandidateSet, make_candidates
from .offline import (
    OfflineConfig,
    collect_offline,
    coverage_coefficient,
    ensure_behavior_coverage,
    min_exploration_prob,
    offline_gap,
    run_psr_lcb,
)
from .online import OnlineConfig, evaluate_output, run_psr_ucb
from .planner import leaf_table, plan_on_table
from .policies import UniformActionSeqPolicy, policy_from_dict, uniform_policy
from .pomdp import BUILTIN_ENVS, TabularPomdp, default_psr, dynamics_matrix, pomdp_from_dict, psr_rank
from .theory import EnvSummary, resolve_theory_params
from .verify import SUITES, verify


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    path.write_text(buf.getvalue())


def _load_config(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def build_env(spec: dict) -> TabularPomdp:
    if "path" in spec:
        with open(spec["path"]) as fh:
            return pomdp_from_dict(json.load(fh))
    name = spec["builtin"]
    if name not in BUILTIN_ENVS:
        raise PsrLabError(f"unknown builtin environment {name!r}")
    return BUILTIN_ENVS[name](**spec.get("params", {}))


def build_candidates(env: TabularPomdp, spec: dict) -> CandidateSet:
    return make_candidates(env, spec.get("mode", "include_true"), **{
        k: v for k, v in spec.items() if k != "mode"
    })


def build_behavior(spec, space):
    if spec in (None, "uniform"):
        return uniform_policy(space)
    if isinstance(spec, dict) and spec.get("type") == "uniform_action_seq":
        return UniformActionSeqPolicy(
            spec.get("n_actions", space.n_actions),
            spec.get("start_step", 1),
            tuple(tuple(s) for s in spec["sequences"]),
        )
    if isinstance(spec, dict):
        return policy_from_dict(spec, space)
    raise PsrLabError(f"unsupported behavior spec {spec!r}")


def _env_rank(env: TabularPomdp) -> int:
    return max(psr_rank(dynamics_matrix(env, h)) for h in range(env.space.horizon))


def _resolve_online(cfg: dict, env, true_model, n_episodes: int, seed: int) -> tuple[OnlineConfig, dict]:
    echo: dict = {}
    if cfg.get("auto_params", False):
        summary = EnvSummary.from_model(true_model, _env_rank(env))
        params = resolve_theory_params(
            summary,
            delta=cfg["delta"],
            c_theory=cfg.get("c_theory", 0.01),
            mode="online",
            n_episodes=n_episodes,
        )
        echo = params.to_dict()
        values = dict(p_min=params.p_min, beta=params.beta, lam=params.lam, alpha=params.alpha)
    else:
        values = dict(p_min=cfg["p_min"], beta=cfg["beta"], lam=cfg["lambda"], alpha=cfg["alpha"])
        echo = {"mode": "online", "c_theory": cfg.get("c_theory", None), **{
            "p_min": values["p_min"], "beta": values["beta"], "lambda": values["lam"], "alpha": values["alpha"],
        }}
    online = OnlineConfig(
        max_iterations=cfg["max_iterations"],
        epsilon=cfg["epsilon"],
        delta=cfg["delta"],
        seed=seed,
        c_theory=cfg.get("c_theory", 1.0),
        auto_params=cfg.get("auto_params", False),
        **values,
    )
    return online, echo


@click.group()
def main() -> None:
    """Confidence-bound learning of predictive state models, desk scale."""


@main.command("gen-env")
@click.option("--name", required=True, type=click.Choice(sorted(BUILTIN_ENVS)))
@click.option("--params", default="{}", help="JSON dict of constructor arguments.")
@click.option("--out", required=True, type=click.Path())
def gen_env(name: str, params: str, out: str) -> None:
    """Write a builtin environment to a JSON file."""
    env = BUILTIN_ENVS[name](**json.loads(params))
    _write_json(Path(out), env.to_dict())
    click.echo(f"wrote {out}")


@main.command("run-online")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seeds", default=None, help="Comma-separated seed list (overrides config).")
@click.option("--c-theory", default=None, type=float, help="Override the scaling knob.")
def run_online(config_path: str, out_dir: str, seeds: str | None, c_theory: float | None) -> None:
    """Run the optimistic loop for each seed and write logs and outputs."""
    config = _load_config(config_path)
    if c_theory is not None:
        config.setdefault("online", {})["c_theory"] = c_theory
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = build_env(config["env"])
    true_model, _ = default_psr(env)
    candidates = build_candidates(env, config.get("candidates", {"mode": "include_true"}))
    seed_list = (
        [int(s) for s in seeds.split(",")] if seeds is not None else config.get("seeds", [0])
    )
    ocfg = config["online"]
    for seed in seed_list:
        started = time.perf_counter()
        online, echo = _resolve_online(ocfg, env, true_model, ocfg["max_iterations"], seed)
        result = run_psr_ucb(env, online, candidates, true_model.core_tests)
        rows = [
            [log.k, log.ucb_value, log.feasible_size, log.candidate_id] for log in result.logs
        ]
        _write_csv(out / f"logs_seed{seed}.csv", ["k", "ucb_value", "feasible_size", "candidate_id"], rows)
        summary = {
            "run_id": f"online-seed{seed}",
            "seed": seed,
            "terminated": result.terminated,
            "iterations": len(result.logs),
            "gap": None,
            "max_tv": None,
            "params": echo,
            "epsilon": online.epsilon,
            "delta": online.delta,
        }
        if result.terminated:
            gap, max_tv = evaluate_output(env, true_model, result.final_model, result.final_policy)
            summary["gap"] = gap
            summary["max_tv"] = max_tv
            _write_json(out / f"model_seed{seed}.json", result.final_model.to_dict())
            _write_json(out / f"policy_seed{seed}.json", result.final_policy.to_dict())
        _write_json(out / f"summary_seed{seed}.json", summary)
        click.echo(
            f"seed {seed}: terminated={result.terminated} iterations={len(result.logs)} "
            f"({time.perf_counter() - started:.2f} s)"
        )


def _offline_values(cfg: dict, env, true_model, behavior, n_episodes: int, target_policy) -> tuple[dict, dict]:
    if cfg.get("auto_params", False):
        iota = min_exploration_prob(behavior, true_model.core_tests)
        coverage = cfg.get("coverage")
        if coverage is None:
            coverage = coverage_coefficient(env, target_policy, behavior)
        summary = EnvSummary.from_model(true_model, _env_rank(env))
        params = resolve_theory_params(
            summary,
            delta=cfg.get("delta", 0.05),
            c_theory=cfg.get("c_theory", 0.01),
            mode="offline",
            n_episodes=n_episodes,
            coverage=coverage,
            iota=iota,
        )
        echo = params.to_dict() | {"iota": iota, "coverage": coverage}
        values = dict(p_min=params.p_min, beta=params.beta, lam=params.lam, alpha=params.alpha)
    else:
        values = dict(p_min=cfg["p_min"], beta=cfg["beta"], lam=cfg["lambda"], alpha=cfg["alpha"])
        echo = {"mode": "offline", "c_theory": cfg.get("c_theory"), **{
            "p_min": values["p_min"], "beta": values["beta"], "lambda": values["lam"], "alpha": values["alpha"],
        }}
    return values, echo


def _run_offline_once(env, true_model, candidates, behavior, cfg: dict, n_episodes: int, seed: int):
    space = env.space
    ensure_behavior_coverage(behavior, true_model.core_tests)
    reward_leaves = leaf_table(space, env.reward_of)
    opt_policy, _ = plan_on_table(space, true_model.prob_table(space.horizon) * reward_leaves)
    values, echo = _offline_values(cfg, env, true_model, behavior, n_episodes, opt_policy)
    dataset = collect_offline(env, behavior, n_episodes, seed)
    offline = OfflineConfig(
        n_episodes=n_episodes,
        seed=seed,
        c_theory=cfg.get("c_theory", 1.0),
        auto_params=cfg.get("auto_params", False),
        **values,
    )
    result = run_psr_lcb(dataset, candidates, offline, reward_leaves)
    gap = offline_gap(env, true_model, opt_policy, result.policy)
    iota = min_exploration_prob(behavior, true_model.core_tests)
    coverage = coverage_coefficient(env, opt_policy, behavior)
    return result, gap, iota, coverage, echo


@main.command("run-offline")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seeds", default=None)
@click.option("--c-theory", default=None, type=float)
def run_offline(config_path: str, out_dir: str, seeds: str | None, c_theory: float | None) -> None:
    """Collect behavior data, run the pessimistic pipeline, write outputs."""
    config = _load_config(config_path)
    if c_theory is not None:
        config.setdefault("offline", {})["c_theory"] = c_theory
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = build_env(config["env"])
    true_model, _ = default_psr(env)
    candidates = build_candidates(env, config.get("candidates", {"mode": "include_true"}))
    behavior = build_behavior(config.get("behavior", "uniform"), env.space)
    ocfg = config["offline"]
    seed_list = (
        [int(s) for s in seeds.split(",")] if seeds is not None else config.get("seeds", [0])
    )
    rows = []
    for seed in seed_list:
        started = time.perf_counter()
        result, gap, iota, coverage, echo = _run_offline_once(
            env, true_model, candidates, behavior, ocfg, ocfg["n_episodes"], seed
        )
        rows.append([ocfg["n_episodes"], seed, gap, result.pessimistic_value, iota, coverage])
        _write_json(out / f"model_seed{seed}.json", result.model.to_dict())
        _write_json(out / f"policy_seed{seed}.json", result.policy.to_dict())
        _write_json(
            out / f"summary_seed{seed}.json",
            {
                "run_id": f"offline-seed{seed}",
                "seed": seed,
                "K": ocfg["n_episodes"],
                "gap": gap,
                "lcb_value": result.pessimistic_value,
                "iota": iota,
                "c_infinity": coverage,
                "params": echo,
            },
        )
        click.echo(f"seed {seed}: gap={gap:.4f} ({time.perf_counter() - started:.2f} s)")
    _write_csv(
        out / "results.csv",
        ["K", "seed", "gap", "lcb_value", "iota", "c_infinity"],
        rows,
    )


@main.command("sweep-offline")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--k-list", default="250,1000,4000")
@click.option("--seeds", default="20", help="Seed count or comma-separated list.")
def sweep_offline(config_path: str, out_dir: str, k_list: str, seeds: str) -> None:
    """Gap-versus-data-size sweep; one CSV row per (K, seed)."""
    config = _load_config(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = build_env(config["env"])
    true_model, _ = default_psr(env)
    candidates = build_candidates(env, config.get("candidates", {"mode": "include_true"}))
    behavior = build_behavior(config.get("behavior", "uniform"), env.space)
    ocfg = config["offline"]
    ks = [int(k) for k in k_list.split(",")]
    seed_list = [int(s) for s in seeds.split(",")] if "," in seeds else list(range(int(seeds)))
    rows = []
    medians = {}
    for K in ks:
        gaps = []
        for seed in seed_list:
            result, gap, iota, coverage, _ = _run_offline_once(
                env, true_model, candidates, behavior, ocfg, K, seed
            )
            rows.append([K, seed, gap, result.pessimistic_value, iota, coverage])
            gaps.append(gap)
            _write_json(out / f"model_K{K}_seed{seed}.json", result.model.to_dict())
            _write_json(out / f"policy_K{K}_seed{seed}.json", result.policy.to_dict())
        medians[K] = float(np.median(gaps))
        click.echo(f"K={K}: median gap {medians[K]:.4f}")
    _write_csv(
        out / "results.csv",
        ["K", "seed", "gap", "lcb_value", "iota", "c_infinity"],
        rows,
    )
    _write_json(out / "medians.json", {str(k): v for k, v in medians.items()})


@main.command("verify")
@click.option("--suite", default="all", type=click.Choice(sorted(SUITES) + ["all"]))
@click.option("--seeds", default=100, type=int)
def verify_cmd(suite: str, seeds: int) -> None:
    """Run property suites; exit nonzero on any failed check."""
    report = verify(suite, seeds)
    for line in report.lines():
        click.echo(line)
    passed = sum(1 for r in report.results if r.passed)
    click.echo(f"{passed}/{len(report.results)} checks passed")
    if not report.all_passed:
        sys.exit(1)


@main.command("report")
@click.option("--out", "out_dir", required=True, type=click.Path(exists=True))
def report_cmd(out_dir: str) -> None:
    """Summarize the JSON/CSV artifacts of a finished run directory."""
    out = Path(out_dir)
    summaries = sorted(out.glob("summary_seed*.json"))
    if summaries:
        gaps, terms = [], []
        for path in summaries:
            data = json.loads(path.read_text())
            if data.get("gap") is not None:
                gaps.append(data["gap"])
            if "terminated" in data:
                terms.append(bool(data["terminated"]))
        click.echo(f"runs: {len(summaries)}")
        if terms:
            click.echo(f"terminated: {sum(terms)}/{len(terms)}")
        if gaps:
            click.echo(f"gap median {float(np.median(gaps)):.4f} max {max(gaps):.4f}")
    results = out / "results.csv"
    if results.exists():
        with open(results) as fh:
            rows = list(csv.DictReader(fh))
        by_k: dict[str, list[float]] = {}
        for row in rows:
            by_k.setdefault(row["K"], []).append(float(row["gap"]))
        for k in sorted(by_k, key=int):
            click.echo(f"K={k}: n={len(by_k[k])} median gap {float(np.median(by_k[k])):.4f}")
    if not summaries and not results.exists():
        click.echo("nothing to report")


if __name__ == "__main__":
    main()
