"""Offline pessimistic learning from a fixed behavior dataset.

Episodes are collected i.i.d. under a behavior policy and split evenly at
random into per-step buckets.  Selection and bonus construction reuse the
online machinery; the output policy maximizes estimated value minus bonus
(a lower confidence bound on the true value).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import math

import numpy as np

from .bonus import BonusEvaluator
from .errors import StructuralError
from .estimation import CandidateSet, DataEntry, DatasetFamily, constrained_mle
from .online import _build_evaluator
from .planner import leaf_table, plan_on_table
from .policies import DeterministicTreePolicy, Policy, policy_weight
from .pomdp import TabularPomdp
from .psr import CoreTestSet, PsrModel
from .seeding import child_seed, rng_for
from .spaces import History, ObsActSpace, enumerate_histories


@dataclass(frozen=True)
class OfflineConfig:
    n_episodes: int
    p_min: float
    beta: float
    lam: float
    alpha: float
    seed: int
    c_theory: float = 1.0
    auto_params: bool = False
    candidate_spec: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("p_min", "beta", "lam", "alpha"):
            if getattr(self, name) <= 0:
                raise StructuralError(f"{name} must be positive")
        if self.n_episodes < 1:
            raise StructuralError("need at least one episode")


BEHAVIOR_POLICY_ID = "behavior"


def collect_offline(env: TabularPomdp, behavior: Policy, n_episodes: int, seed: int) -> DatasetFamily:
    """Sample i.i.d. episodes and split them evenly across step buckets.

    The bucket assignment is a seeded shuffle of the balanced pattern
    0,1,...,H-1,0,1,..., so bucket sizes differ by at most one.
    """
    space = env.space
    if n_episodes < space.horizon:
        raise StructuralError("need at least H episodes for a full split")
    assignment = np.array([i % space.horizon for i in range(n_episodes)])
    rng_for(seed, "offline-split").shuffle(assignment)
    dataset = DatasetFamily.empty(space)
    dataset.policies[BEHAVIOR_POLICY_ID] = behavior
    for i in range(n_episodes):
        trajectory = env.sample_episode(behavior, child_seed(seed, "offline-episode", i))
        dataset.add(DataEntry(trajectory, BEHAVIOR_POLICY_ID, int(assignment[i])))
    return dataset


def ensure_behavior_coverage(behavior: Policy, core_tests: CoreTestSet) -> float:
    """Reject behavior policies that miss an exploration sequence entirely.

    Returns the minimum exploration probability when it is positive.
    """
    iota = min_exploration_prob(behavior, core_tests)
    if iota <= 0.0:
        raise StructuralError("behavior policy gives zero probability to an exploration sequence")
    return iota


def min_exploration_prob(behavior: Policy, core_tests: CoreTestSet) -> float:
    """Worst-case probability the behavior policy emits any exploration sequence.

    For each step's exploration set, minimizes over every positive-weight
    branch of earlier observations and actions, and within the sequence over
    its observation branches; observation-independent behavior policies
    reduce to a product of action probabilities.
    """
    space = core_tests.space
    worst = 1.0
    for h in range(space.horizon):
        for seq in core_tests.exploration_seqs[h]:
            if not seq:
                continue
            worst = min(worst, _min_seq_prob(behavior, space, h, seq))
    return worst


def _min_seq_prob(behavior: Policy, space: ObsActSpace, h: int, seq: tuple[int, ...]) -> float:
    """min over reachable branches of P(actions at steps h+1..h+len = seq)."""

    def min_over_prefix(hist: History) -> float:
        if len(hist) == h:
            return seq_prob_from(hist, 0)
        best = math.inf
        for o in range(space.n_obs):
            probs = behavior.action_probs(hist, o)
            for a in range(space.n_actions):
                if probs[a] > 0.0:
                    best = min(best, min_over_prefix(hist.extend(o, a)))
        return best

    def seq_prob_from(hist: History, j: int) -> float:
        if j == len(seq):
            return 1.0
        best = math.inf
        for o in range(space.n_obs):
            p = float(behavior.action_probs(hist, o)[seq[j]])
            if p == 0.0:
                return 0.0
            best = min(best, p * seq_prob_from(hist.extend(o, seq[j]), j + 1))
        return best

    return min_over_prefix(History())


def coverage_coefficient(env: TabularPomdp, target: Policy, behavior: Policy) -> float:
    """Largest prefix-probability ratio of target to behavior over all steps.

    Prefixes the environment cannot produce are skipped; a target-reachable
    prefix the behavior never produces sends the coefficient to infinity.
    """
    space = env.space
    worst = 1.0
    for h in range(space.horizon + 1):
        for hist in enumerate_histories(space, h):
            if env.exact_traj_prob(hist) <= 0.0:
                continue
            wt = policy_weight(target, hist)
            if wt == 0.0:
                continue
            wb = policy_weight(behavior, hist)
            if wb == 0.0:
                return math.inf
            worst = max(worst, wt / wb)
    return worst


@dataclass(frozen=True)
class OfflineResult:
    policy: DeterministicTreePolicy
    model: PsrModel
    model_id: int
    feasible_size: int
    pessimistic_value: float
    gram_condition_numbers: tuple[float, ...]
    evaluator: BonusEvaluator


def run_psr_lcb(dataset: DatasetFamily, candidates: CandidateSet, config: OfflineConfig,
                reward_leaves: np.ndarray) -> OfflineResult:
    """Stable selection, bonus construction, and pessimistic planning."""
    mle = constrained_mle(candidates, dataset, config.p_min, config.beta)
    evaluator = _build_evaluator(mle.model, dataset, config.lam, config.alpha)
    space = mle.model.space
    probs = mle.model.prob_table(space.horizon)
    leaves = probs * (reward_leaves - evaluator.bonus_table())
    policy, value = plan_on_table(space, leaves)
    return OfflineResult(
        policy,
        mle.model,
        mle.selected_id,
        len(mle.feasible_ids),
        float(value),
        tuple(g.condition_number for g in evaluator.grams),
        evaluator,
    )


def offline_gap(
    env: TabularPomdp, true_model: PsrModel, target: Policy, learned: Policy
) -> float:
    """Exact value difference of the target over the learned policy."""
    from .planner import policy_value_on_table

    space = env.space
    reward_leaves = leaf_table(space, env.reward_of)
    table = true_model.prob_table(space.horizon) * reward_leaves
    return float(
        policy_value_on_table(space, target, table) - policy_value_on_table(space, learned, table)
    )
