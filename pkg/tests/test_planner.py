import itertools

import numpy as np
import pytest

from conftest import make_single_state_env
from psrlab.estimation import DataEntry, DatasetFamily
from psrlab.online import _build_evaluator
from psrlab.planner import leaf_table, plan, plan_on_table, policy_value_on_table
from psrlab.policies import DeterministicTreePolicy, uniform_policy
from psrlab.pomdp import default_psr, random_revealing
from psrlab.spaces import History


def all_tree_policies(space):
    sizes = [space.n_histories(h - 1) * space.n_obs for h in range(1, space.horizon + 1)]
    total = sum(sizes)
    for assignment in itertools.product(range(space.n_actions), repeat=total):
        tables = []
        at = 0
        for size in sizes:
            tables.append(np.array(assignment[at : at + size], dtype=np.int64))
            at += size
        yield DeterministicTreePolicy(space, tuple(tables))


def brute_force_best(space, leaves):
    best_val, best_policy = -np.inf, None
    for policy in all_tree_policies(space):
        val = policy_value_on_table(space, policy, leaves)
        if val > best_val + 1e-15:
            best_val, best_policy = val, policy
    return best_policy, best_val


@pytest.fixture(scope="module")
def env222():
    return random_revealing(seed=11, n_states=2, n_obs=2, n_actions=2, horizon=2, alpha_threshold=0.05)


@pytest.fixture(scope="module")
def model222(env222):
    return default_psr(env222)[0]


def test_constant_leaves_value():
    env = make_single_state_env(horizon=1, n_obs=2, n_actions=2)
    model, _ = default_psr(env)
    policy, val = plan(model, lambda t: 0.25)
    assert val == pytest.approx(0.25 * 2, abs=1e-15)  # sum over the two observations


def test_bandit_argmax():
    env = make_single_state_env(horizon=1, n_obs=2, n_actions=2, emission_row=np.array([0.5, 0.5]))
    model, _ = default_psr(env)
    rewards = {0: 0.3, 1: 0.7}
    policy, val = plan(model, lambda t: model.seq_prob(t) * rewards[t.steps[0][1]])
    assert val == pytest.approx(0.7, abs=1e-12)
    assert policy.action_at(History(), 0) == 1
    assert policy.action_at(History(), 1) == 1


def test_tie_breaks_to_lowest_action():
    env = make_single_state_env(horizon=1, n_obs=2, n_actions=3)
    model, _ = default_psr(env)
    policy, _ = plan(model, lambda t: 1.0)
    assert policy.action_at(History(), 0) == 0


def _bonus_evaluator(env, model, seed=0, n_entries=6, lam=1.0, alpha=0.7):
    dataset = DatasetFamily.empty(env.space)
    pol = uniform_policy(env.space)
    for i in range(n_entries):
        traj = env.sample_episode(pol, 1000 + seed * 97 + i)
        dataset.add(DataEntry(traj, "b", i % env.space.horizon), pol)
    return _build_evaluator(model, dataset, lam, alpha)


@pytest.mark.parametrize("leaf_kind", ["reward", "bonus", "reward_minus_bonus", "abs_diff"])
def test_planner_matches_policy_enumeration(env222, model222, leaf_kind):
    space = env222.space
    probs = model222.prob_table(space.horizon)
    if leaf_kind == "reward":
        leaves = probs * leaf_table(space, env222.reward_of)
    elif leaf_kind == "bonus":
        leaves = probs * _bonus_evaluator(env222, model222).bonus_table()
    elif leaf_kind == "reward_minus_bonus":
        ev = _bonus_evaluator(env222, model222, seed=1)
        leaves = probs * (leaf_table(space, env222.reward_of) - ev.bonus_table())
    else:
        other = default_psr(random_revealing(seed=21, n_states=2, n_obs=2, n_actions=2,
                                             horizon=2, alpha_threshold=0.05))[0]
        leaves = np.abs(probs - other.prob_table(space.horizon))
    policy, val = plan_on_table(space, leaves)
    brute_policy, brute_val = brute_force_best(space, leaves)
    assert val == pytest.approx(brute_val, abs=1e-12)
    assert policy_value_on_table(space, policy, leaves) == pytest.approx(brute_val, abs=1e-12)


def test_plan_value_agrees_with_value_evaluator(model222, env222):
    from psrlab.psr import value

    space = env222.space
    leaves = model222.prob_table(space.horizon) * leaf_table(space, env222.reward_of)
    policy, val = plan_on_table(space, leaves)
    assert value(model222, policy, env222.reward_of) == pytest.approx(val, abs=1e-12)


def test_plan_rejects_wrong_leaf_count(model222):
    with pytest.raises(ValueError):
        plan_on_table(model222.space, np.zeros(3))
