"""Exact policy optimization by backward induction on the history tree.

The planner maximizes ``sum_traj policy_weight(traj) * leaf(traj)`` over all
history-dependent policies.  Model probabilities, rewards, and bonuses are
folded into the leaf function by the caller, so one routine serves greedy
planning, optimistic/pessimistic planning, and max-policy total variation.

Deterministic policies attain the maximum (the objective is linear in each
conditional action distribution), and ties break toward the lowest action
index, so results are reproducible.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .policies import DeterministicTreePolicy, Policy, policy_weight_vector
from .psr import PsrModel
from .spaces import History, ObsActSpace, history_from_lex


def leaf_table(space: ObsActSpace, leaf_fn: Callable[[History], float]) -> np.ndarray:
    """Evaluate a trajectory functional on every full history, in lex order."""
    return np.array(
        [leaf_fn(history_from_lex(space, space.horizon, idx)) for idx in range(space.n_trajectories)]
    )


def plan_on_table(space: ObsActSpace, leaves: np.ndarray) -> tuple[DeterministicTreePolicy, float]:
    """Backward induction over precomputed leaf values."""
    if leaves.shape != (space.n_trajectories,):
        raise ValueError(f"expected {space.n_trajectories} leaf values, got {leaves.shape}")
    values = leaves
    choices: list[np.ndarray] = []
    for _ in range(space.horizon):
        shaped = values.reshape(-1, space.n_obs, space.n_actions)
        choices.append(shaped.argmax(axis=2).reshape(-1))  # first max = lowest action
        values = shaped.max(axis=2).sum(axis=1)
    choices.reverse()
    policy = DeterministicTreePolicy(space, tuple(choices))
    return policy, float(values[0])


def plan(model: PsrModel, leaf_fn: Callable[[History], float]) -> tuple[DeterministicTreePolicy, float]:
    """Maximize the expected leaf value; the space cap bounds the tree size."""
    return plan_on_table(model.space, leaf_table(model.space, leaf_fn))


def policy_value_on_table(space: ObsActSpace, policy: Policy, leaves: np.ndarray) -> float:
    """sum_traj policy_weight(traj) * leaves[traj], exactly."""
    weights = policy_weight_vector(policy, space)
    return float(np.dot(weights, leaves))
