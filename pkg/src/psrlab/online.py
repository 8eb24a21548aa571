"""Online confidence-bound learning loop.

Each iteration collects one episode per step under the previous greedy
policy spliced with uniform exploration over that step's exploration
sequences, re-selects a model by stable constrained likelihood, scores
every trajectory with the bonus built from the selected model's features
over the collected data, and plans greedily against the bonus.  The loop
stops once the planned bonus value is at most half the accuracy target;
the loop body never touches the reward function.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .bonus import BonusEvaluator, FeatureGram
from .errors import EmptyFeasibleSet, StructuralError
from .estimation import CandidateSet, DataEntry, DatasetFamily, MleCache, constrained_mle
from .planner import leaf_table, plan_on_table, policy_value_on_table
from .policies import (
    CompositePolicy,
    DeterministicTreePolicy,
    Policy,
    UniformActionSeqPolicy,
    uniform_policy,
)
from .pomdp import TabularPomdp
from .psr import CoreTestSet, PsrModel
from .seeding import child_seed


@dataclass(frozen=True)
class OnlineConfig:
    max_iterations: int
    epsilon: float
    delta: float
    p_min: float
    beta: float
    lam: float
    alpha: float
    seed: int
    c_theory: float = 1.0
    auto_params: bool = False
    candidate_spec: dict = field(default_factory=dict)
    env_spec: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (0 < self.epsilon < 1 and 0 < self.delta < 1):
            raise StructuralError("epsilon and delta must lie in (0, 1)")
        for name in ("p_min", "beta", "lam", "alpha"):
            if getattr(self, name) <= 0:
                raise StructuralError(f"{name} must be positive")
        if self.max_iterations < 1:
            raise StructuralError("need at least one iteration")


@dataclass(frozen=True)
class IterationLog:
    k: int
    candidate_id: int
    candidate_label: str
    feasible_size: int
    ucb_value: float
    bucket_sizes: tuple[int, ...]
    wall_clock: float
    terminated: bool


@dataclass(frozen=True)
class OnlineResult:
    final_model: PsrModel | None
    final_model_id: int | None
    final_policy: DeterministicTreePolicy | None
    logs: tuple[IterationLog, ...]
    dataset: DatasetFamily
    terminated: bool
    last_model: PsrModel | None = None
    last_evaluator: BonusEvaluator | None = None


def exploration_policy(prefix: Policy, h: int, core_tests: CoreTestSet) -> Policy:
    """Prefix policy before step ``h``, uniform exploration from ``h`` on.

    Exploration draws one action sequence uniformly from the step-``h-1``
    exploration set; sequences shorter than the remaining horizon are padded
    with uniform random actions, and the padding is part of the policy so
    its weights stay exact.
    """
    if not 1 <= h <= core_tests.space.horizon:
        raise StructuralError(f"exploration step {h} outside [1, H]")
    suffix = UniformActionSeqPolicy(
        core_tests.space.n_actions, start_step=h, sequences=core_tests.exploration_seqs[h - 1]
    )
    if h == 1:
        return suffix
    return CompositePolicy(h, prefix, suffix)


def _build_evaluator(
    model: PsrModel, dataset: DatasetFamily, lam: float, alpha: float
) -> BonusEvaluator:
    """Grams of the selected model's features over the per-step buckets."""
    space = model.space
    grams = []
    for h in range(space.horizon):
        feats = model.feature_table(h)
        counts = np.zeros(len(feats))
        for entry in dataset.buckets[h]:
            counts[entry.trajectory.prefix(h).lex_index(space)] += 1.0
        used = counts > 0
        if np.any(np.isnan(feats[used, 0])):
            raise StructuralError("stable selection admitted a degenerate recorded prefix")
        grams.append(FeatureGram.build(h, model.dims[h], lam, feats[used], counts[used]))
    return BonusEvaluator(tuple(grams), alpha, model)


def run_psr_ucb(
    env: TabularPomdp,
    config: OnlineConfig,
    candidates: CandidateSet,
    true_core_tests: CoreTestSet | None = None,
) -> OnlineResult:
    """Run the optimistic loop; returns nothing final if the budget runs out.

    The reward function is read only after termination, to extract the
    greedy output policy; exceeding ``max_iterations`` is a reported
    outcome, not an error.
    """
    space = env.space
    core = true_core_tests if true_core_tests is not None else candidates.models[0].core_tests
    dataset = DatasetFamily.empty(space)
    previous: Policy = uniform_policy(space)
    cache = MleCache(candidates, config.p_min)
    logs: list[IterationLog] = []
    final_model = None
    final_model_id = None
    last_model = None
    last_evaluator = None
    terminated = False
    for k in range(1, config.max_iterations + 1):
        started = time.perf_counter()
        for h in range(1, space.horizon + 1):
            policy = exploration_policy(previous, h, core)
            policy_id = f"explore[k={k},h={h}]"
            episode_seed = child_seed(config.seed, "episode", k * (space.horizon + 1) + h)
            trajectory = env.sample_episode(policy, episode_seed)
            dataset.add(DataEntry(trajectory, policy_id, h - 1), policy)
        try:
            mle = constrained_mle(candidates, dataset, config.p_min, config.beta, cache)
        except EmptyFeasibleSet as exc:
            raise EmptyFeasibleSet(f"iteration {k}: {exc}") from exc
        evaluator = _build_evaluator(mle.model, dataset, config.lam, config.alpha)
        leaves = mle.model.prob_table(space.horizon) * evaluator.bonus_table()
        greedy, ucb_value = plan_on_table(space, leaves)
        terminated = ucb_value <= config.epsilon / 2.0
        logs.append(
            IterationLog(
                k,
                mle.selected_id,
                mle.selected_label,
                len(mle.feasible_ids),
                float(ucb_value),
                tuple(len(b) for b in dataset.buckets),
                time.perf_counter() - started,
                terminated,
            )
        )
        last_model, last_evaluator = mle.model, evaluator
        if terminated:
            final_model = mle.model
            final_model_id = mle.selected_id
            break
        previous = greedy
    final_policy = None
    if terminated and final_model is not None:
        reward_leaves = leaf_table(space, env.reward_of)
        final_policy, _ = plan_on_table(space, final_model.prob_table(space.horizon) * reward_leaves)
    return OnlineResult(
        final_model,
        final_model_id,
        final_policy,
        tuple(logs),
        dataset,
        terminated,
        last_model,
        last_evaluator,
    )


def evaluate_output(
    env: TabularPomdp,
    true_model: PsrModel,
    final_model: PsrModel,
    final_policy: Policy,
) -> tuple[float, float]:
    """Exact suboptimality of the output policy and worst-policy model gap.

    Both by full enumeration: the gap compares the optimal value of the
    true model with the output policy's value; the model distance maximizes
    the policy-weighted absolute probability difference over all policies.
    """
    space = env.space
    reward_leaves = leaf_table(space, env.reward_of)
    true_table = true_model.prob_table(space.horizon)
    _, best_value = plan_on_table(space, true_table * reward_leaves)
    achieved = policy_value_on_table(space, final_policy, true_table * reward_leaves)
    gap = best_value - achieved
    diff = np.abs(final_model.prob_table(space.horizon) - true_table)
    _, max_tv = plan_on_table(space, diff)
    return float(gap), float(max_tv)
