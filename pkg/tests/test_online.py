import numpy as np
import pytest

from conftest import make_single_state_env
from psrlab.errors import EmptyFeasibleSet, StructuralError
from psrlab.estimation import make_candidates
from psrlab.online import (
    OnlineConfig,
    evaluate_output,
    exploration_policy,
    run_psr_ucb,
)
from psrlab.policies import (
    DeterministicTreePolicy,
    UniformActionSeqPolicy,
    policy_weight,
    uniform_policy,
)
from psrlab.pomdp import RewardTable, TabularPomdp, default_psr
from psrlab.spaces import History, ObsActSpace


def base_config(**overrides):
    values = dict(
        max_iterations=40,
        epsilon=0.2,
        delta=0.1,
        p_min=1e-9,
        beta=5.0,
        lam=1.0,
        alpha=0.5,
        seed=0,
    )
    values.update(overrides)
    return OnlineConfig(**values)


def test_exploration_policy_step_one_is_pure_suffix(reference_model):
    pol = exploration_policy(uniform_policy(reference_model.space), 1, reference_model.core_tests)
    assert isinstance(pol, UniformActionSeqPolicy)
    assert pol.sequences == reference_model.core_tests.exploration_seqs[0]


def test_exploration_policy_singleton_suffix():
    space = ObsActSpace(2, 1, 2)
    env = make_single_state_env(horizon=2, n_obs=2, n_actions=1)
    model, _ = default_psr(env)
    pol = exploration_policy(uniform_policy(space), 2, model.core_tests)
    # single action: every exploration suffix is deterministic
    probs = pol.action_probs(History(((0, 0),)), 1)
    assert probs.tolist() == [1.0]


def test_exploration_policy_weight_product(reference_model):
    core = reference_model.core_tests
    space = reference_model.space
    prefix = uniform_policy(space)
    pol = exploration_policy(prefix, 2, core)
    seqs = core.exploration_seqs[1]
    traj = History(((0, 1), (1, seqs[1][0] if seqs[1] else 0)))
    w = policy_weight(pol, traj)
    # prefix weight at step 1 times the mixture weight of the second action
    consistent = [s for s in seqs if len(s) == 0 or s[0] == traj.steps[1][1]]
    pad = sum((1 / space.n_actions) ** (1 if len(s) == 0 else 0) for s in consistent)
    assert w == pytest.approx(0.5 * pad / len(seqs), abs=1e-12)


def test_exploration_policy_step_bounds(reference_model):
    with pytest.raises(StructuralError):
        exploration_policy(uniform_policy(reference_model.space), 0, reference_model.core_tests)


def test_run_degenerate_spaces_terminates_immediately():
    env = make_single_state_env(horizon=2, n_obs=1, n_actions=1, emission_row=np.array([1.0]))
    model, _ = default_psr(env)
    cands = make_candidates(env, "include_true")
    cfg = base_config(epsilon=0.9, alpha=0.3, lam=1.0)
    result = run_psr_ucb(env, cfg, cands, model.core_tests)
    assert result.terminated and len(result.logs) == 1
    expected = min(0.3 * np.sqrt(sum(1.0 / (1.0 + 1.0) for _ in range(2))), 1.0)
    assert result.logs[0].ucb_value == pytest.approx(expected, abs=1e-12)
    assert result.final_policy is not None


def test_run_include_true_returns_truth(reference_env, reference_model):
    cands = make_candidates(reference_env, "include_true")
    cfg = base_config(max_iterations=120)
    result = run_psr_ucb(reference_env, cfg, cands, reference_model.core_tests)
    assert result.terminated
    assert result.final_model_id == 0
    gap, max_tv = evaluate_output(reference_env, reference_model, result.final_model, result.final_policy)
    assert abs(gap) <= 1e-12
    assert max_tv <= 1e-9


def test_dataset_growth_one_entry_per_step(reference_env, reference_model):
    cands = make_candidates(reference_env, "include_true")
    cfg = base_config(max_iterations=7, epsilon=1e-9)
    result = run_psr_ucb(reference_env, cfg, cands, reference_model.core_tests)
    assert len(result.logs) == 7
    assert all(log.bucket_sizes == (log.k,) * reference_env.space.horizon for log in result.logs)


def test_loop_body_is_reward_free(reference_env, reference_model):
    reads = {"n": 0}

    def counting_reward(traj):
        reads["n"] += 1
        return 0.5

    env = TabularPomdp(
        reference_env.n_states,
        reference_env.space,
        reference_env.transition,
        reference_env.emission,
        reference_env.initial_state,
        __import__("psrlab.pomdp", fromlist=["TrajectoryReward"]).TrajectoryReward(counting_reward),
    )
    cands = make_candidates(reference_env, "include_true")
    cfg = base_config(max_iterations=5, epsilon=1e-9)  # never terminates
    result = run_psr_ucb(env, cfg, cands, reference_model.core_tests)
    assert not result.terminated
    assert result.final_model is None and result.final_policy is None
    assert reads["n"] == 0
    cfg2 = base_config(max_iterations=120)
    result2 = run_psr_ucb(env, cfg2, cands, reference_model.core_tests)
    assert result2.terminated and reads["n"] > 0


def test_run_determinism(reference_env, reference_model):
    cands = make_candidates(reference_env, "dithered", seed=5, n=6, scale=0.05)
    cfg = base_config(max_iterations=15, epsilon=1e-9, seed=3)
    a = run_psr_ucb(reference_env, cfg, cands, reference_model.core_tests)
    b = run_psr_ucb(reference_env, cfg, cands, reference_model.core_tests)
    logs_a = [(l.k, l.candidate_id, l.feasible_size, l.ucb_value, l.bucket_sizes) for l in a.logs]
    logs_b = [(l.k, l.candidate_id, l.feasible_size, l.ucb_value, l.bucket_sizes) for l in b.logs]
    assert logs_a == logs_b


def test_empty_feasible_set_carries_iteration_context(reference_env, reference_model):
    cands = make_candidates(reference_env, "include_true")
    cfg = base_config(p_min=0.9)
    with pytest.raises(EmptyFeasibleSet, match="iteration 1"):
        run_psr_ucb(reference_env, cfg, cands, reference_model.core_tests)


def test_evaluate_output_bandit_gap():
    space = ObsActSpace(1, 2, 1)
    emission = np.ones((1, 1, 1))
    reward = RewardTable(np.array([[[0.3, 0.7]]]))
    env = TabularPomdp(1, space, np.ones((0, 2, 1, 1)), emission, 0, reward)
    model, _ = default_psr(env)
    worst = DeterministicTreePolicy(space, (np.zeros(1, dtype=np.int64),))
    gap, max_tv = evaluate_output(env, model, model, worst)
    assert gap == pytest.approx(0.4, abs=1e-12)
    assert max_tv == 0.0


def test_evaluate_output_matches_brute_force_recomputation():
    from test_planner import all_tree_policies

    from psrlab.estimation import make_candidates
    from psrlab.planner import leaf_table, policy_value_on_table
    from psrlab.pomdp import default_psr, random_revealing

    env = random_revealing(seed=11, n_states=2, n_obs=2, n_actions=2, horizon=2, alpha_threshold=0.05)
    true_model, _ = default_psr(env)
    cands = make_candidates(env, "dithered", seed=5, n=10, scale=0.05)
    cfg = base_config(max_iterations=200, seed=2)
    result = run_psr_ucb(env, cfg, cands, true_model.core_tests)
    assert result.terminated
    gap, max_tv = evaluate_output(env, true_model, result.final_model, result.final_policy)
    space = env.space
    reward = true_model.prob_table(2) * leaf_table(space, env.reward_of)
    best = max(policy_value_on_table(space, p, reward) for p in all_tree_policies(space))
    brute_gap = best - policy_value_on_table(space, result.final_policy, reward)
    diff = np.abs(result.final_model.prob_table(2) - true_model.prob_table(2))
    brute_tv = max(policy_value_on_table(space, p, diff) for p in all_tree_policies(space))
    assert gap == pytest.approx(brute_gap, abs=1e-12)
    assert max_tv == pytest.approx(brute_tv, abs=1e-12)


def test_ucb_value_sequence_logged_within_unit_interval(reference_env, reference_model):
    cands = make_candidates(reference_env, "include_true")
    cfg = base_config(max_iterations=10, epsilon=1e-9)
    result = run_psr_ucb(reference_env, cfg, cands, reference_model.core_tests)
    for log in result.logs:
        assert 0.0 <= log.ucb_value <= 1.0
