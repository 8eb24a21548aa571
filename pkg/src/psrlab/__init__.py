"""Confidence-bound learning of predictive state representations on tabular
sequential decision problems, with exact desk-scale evaluation tooling."""

from .errors import (
    DegenerateHistory,
    EmptyFeasibleSet,
    EnumerationCapExceeded,
    PsrLabError,
    RejectionBudgetExhausted,
    SingularCoreTests,
    StructuralError,
)
from .spaces import Future, History, ObsActSpace
from .policies import (
    CompositePolicy,
    DeterministicTreePolicy,
    Policy,
    UniformActionSeqPolicy,
    policy_weight,
    uniform_policy,
)
from .psr import CoreTestSet, PsrModel, check_self_consistency, gamma, hellinger_sq, tv_distance, value
from .pomdp import (
    GMatrices,
    RewardTable,
    TabularPomdp,
    TrajectoryReward,
    decodability_alpha,
    default_psr,
    dynamics_matrix,
    exact_traj_prob,
    g_matrices,
    near_tie,
    pomdp_to_psr,
    psr_rank,
    random_mdp,
    random_revealing,
    sample_episode,
    select_core_tests,
    tiger,
)
from .estimation import (
    CandidateSet,
    DataEntry,
    DatasetFamily,
    MleCache,
    candidate_set_from_dict,
    conditional_tv_diagnostic,
    constrained_mle,
    dataset_from_jsonl,
    log_likelihood,
    make_candidates,
    theta_min_feasible,
)
from .bonus import (
    BonusEvaluator,
    FeatureGram,
    accumulate,
    bonus,
    decodable_transform,
    elliptical_potential_check,
    ground_truth_gram,
    transfer_score_check,
)
from .planner import plan, plan_on_table
from .online import OnlineConfig, evaluate_output, exploration_policy, run_psr_ucb
from .offline import (
    OfflineConfig,
    collect_offline,
    coverage_coefficient,
    ensure_behavior_coverage,
    min_exploration_prob,
    offline_gap,
    run_psr_lcb,
)
from .theory import EnvSummary, resolve_theory_params
from .verify import verify

__all__ = [name for name in dir() if not name.startswith("_")]
