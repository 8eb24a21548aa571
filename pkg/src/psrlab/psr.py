"""Predictive state representations: parameters, probabilities, and distances.

A model is a start vector ``psi0``, per-step observation-action matrices
``M[h][o][a]``, and closing vectors ``phi[0..H]``.  A history's state vector
is the ordered matrix product applied to ``psi0``; its probability is the
closing vector applied to that state.  Prediction features are the state
normalized by its probability, one coordinate per core test.

All distances and values here are exact sums over the full trajectory tree
(exponential in the horizon; the space cap bounds the blow-up) accumulated
with compensated summation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateHistory, StructuralError
from .policies import Policy, policy_weight_vector
from .spaces import Future, History, ObsActSpace, history_from_lex

PSI_GUARD = 1e-12


@dataclass(frozen=True)
class CoreTestSet:
    """Per-step core tests with their action sets and exploration sets.

    ``tests[h]`` are the tests anchored at history step ``h``; their first
    observation lands at step ``h + 1``.  ``action_seqs[h]`` deduplicates the
    tests' action sequences.  ``exploration_seqs[h]`` is the union of every
    core action sequence at ``h`` with every single action prefixed to a core
    action sequence at ``h + 1`` (the step-``H``-anchored set is the lone
    empty sequence).
    """

    space: ObsActSpace
    tests: tuple[tuple[Future, ...], ...]
    action_seqs: tuple[tuple[tuple[int, ...], ...], ...]
    exploration_seqs: tuple[tuple[tuple[int, ...], ...], ...]

    def d(self, h: int) -> int:
        return len(self.tests[h])

    @property
    def max_action_seqs(self) -> int:
        return max(len(seqs) for seqs in self.action_seqs)

    def to_dict(self) -> dict:
        return {
            "tests": [
                [{"start_step": t.start_step, "obs": list(t.obs), "acts": list(t.acts)} for t in row]
                for row in self.tests
            ]
        }


def make_core_test_set(space: ObsActSpace, tests_per_step: list[tuple[Future, ...]]) -> CoreTestSet:
    if len(tests_per_step) != space.horizon:
        raise StructuralError("need one test list per step 0..H-1")
    action_seqs: list[tuple[tuple[int, ...], ...]] = []
    for h, tests in enumerate(tests_per_step):
        if not tests:
            raise StructuralError(f"empty core test set at step {h}")
        for t in tests:
            t.validate(space)
            if t.start_step != h:
                raise StructuralError(f"test anchored at {t.start_step} placed at step {h}")
        action_seqs.append(tuple(sorted(set(t.acts for t in tests))))
    exploration: list[tuple[tuple[int, ...], ...]] = []
    for h in range(space.horizon):
        nxt = action_seqs[h + 1] if h + 1 < space.horizon else ((),)
        prefixed = {(a,) + seq for a in range(space.n_actions) for seq in nxt}
        exploration.append(tuple(sorted(prefixed | set(action_seqs[h]))))
    return CoreTestSet(space, tuple(tuple(t) for t in tests_per_step), tuple(action_seqs), tuple(exploration))


def core_test_set_from_dict(space: ObsActSpace, data: dict) -> CoreTestSet:
    tests = [
        tuple(Future(t["start_step"], tuple(t["obs"]), tuple(t["acts"])) for t in row)
        for row in data["tests"]
    ]
    return make_core_test_set(space, tests)


@dataclass(frozen=True)
class PsrModel:
    """Sequential model in predictive-state form; immutable after validation."""

    space: ObsActSpace
    core_tests: CoreTestSet
    psi0: np.ndarray
    M: tuple[np.ndarray, ...]  # M[h-1] has shape (O, A, d_h, d_{h-1})
    phi: tuple[np.ndarray, ...]  # phi[h] has length d_h, for h = 0..H
    _psi_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        H, O, A = self.space.horizon, self.space.n_obs, self.space.n_actions
        if len(self.M) != H or len(self.phi) != H + 1:
            raise StructuralError("need H observation-action tables and H+1 closing vectors")
        dims = [self.psi0.shape[0]]
        for h, ops in enumerate(self.M, start=1):
            if ops.ndim != 4 or ops.shape[0] != O or ops.shape[1] != A:
                raise StructuralError(f"M at step {h} must be (O, A, d_h, d_h-1), got {ops.shape}")
            if ops.shape[3] != dims[-1]:
                raise StructuralError(f"M at step {h} expects input dim {dims[-1]}, got {ops.shape[3]}")
            dims.append(ops.shape[2])
        for h, vec in enumerate(self.phi):
            if vec.shape != (dims[h],):
                raise StructuralError(f"closing vector at step {h} has dim {vec.shape}, expected ({dims[h]},)")
        for h in range(H):
            if self.core_tests.d(h) != dims[h]:
                raise StructuralError(f"{self.core_tests.d(h)} core tests at step {h} but state dim {dims[h]}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.psi0.shape[0],) + tuple(ops.shape[2] for ops in self.M)

    @property
    def max_dim(self) -> int:
        return max(self.dims[:-1])

    # -- state and probability ----------------------------------------------

    def psi(self, history: History) -> np.ndarray:
        """State vector of a history (joint core-test probabilities)."""
        key = history.steps
        cached = self._psi_cache.get(key)
        if cached is not None:
            return cached
        if not key:
            vec = self.psi0
        else:
            o, a = key[-1]
            vec = self.M[len(key) - 1][o, a] @ self.psi(History(key[:-1]))
        self._psi_cache[key] = vec
        return vec

    def seq_prob(self, history: History) -> float:
        """Probability of the history's observations given its actions."""
        history.validate(self.space)
        if len(history) == 0:
            return 1.0
        return float(self.phi[len(history)] @ self.psi(history))

    def prediction_feature(self, history: History, guard: float = PSI_GUARD) -> np.ndarray:
        """Normalized state; coordinate ℓ is the probability of core test ℓ."""
        history.validate(self.space)
        p = float(self.phi[len(history)] @ self.psi(history))
        if p <= guard:
            raise DegenerateHistory(f"history has probability {p:.3g} <= {guard:.3g}")
        return self.psi(history) / p

    def suffix_weight(self, future_steps: tuple[tuple[int, int], ...], start: int, x: np.ndarray) -> float:
        """phi_H^T M_H ... M_{start+1} x for the given future steps."""
        v = x
        for j, (o, a) in enumerate(future_steps, start=start + 1):
            v = self.M[j - 1][o, a] @ v
        return float(self.phi[self.space.horizon] @ v)

    # -- tables over the trajectory tree (lexicographic order) ---------------

    def prob_table(self, h: int) -> np.ndarray:
        """seq_prob of all length-``h`` histories, lexicographically ordered."""
        if h == 0:
            return np.ones(1)
        return self._tables(h)[1]

    def feature_table(self, h: int, guard: float = PSI_GUARD) -> np.ndarray:
        """Prediction features of all length-``h`` histories; NaN rows where degenerate."""
        psis, probs = self._tables(h)
        out = np.full_like(psis, np.nan)
        ok = probs > guard
        out[ok] = psis[ok] / probs[ok, None]
        return out

    def _tables(self, h: int) -> tuple[np.ndarray, np.ndarray]:
        key = ("table", h)
        cached = self._psi_cache.get(key)
        if cached is not None:
            return cached
        if h == 0:
            psis = self.psi0[None, :].copy()
        else:
            prev = self._tables(h - 1)[0]
            ops = self.M[h - 1].reshape(-1, *self.M[h - 1].shape[2:])  # (O*A, d_h, d_{h-1})
            psis = np.einsum("kij,nj->nki", ops, prev).reshape(-1, ops.shape[1])
        probs = psis @ self.phi[h]
        self._psi_cache[key] = (psis, probs)
        return psis, probs

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "space": {"n_obs": self.space.n_obs, "n_actions": self.space.n_actions, "horizon": self.space.horizon},
            "core_tests": self.core_tests.to_dict(),
            "psi0": self.psi0.tolist(),
            "M": [ops.tolist() for ops in self.M],
            "phi": [vec.tolist() for vec in self.phi],
        }


def psr_model_from_dict(data: dict) -> PsrModel:
    sp = data["space"]
    space = ObsActSpace(sp["n_obs"], sp["n_actions"], sp["horizon"])
    core = core_test_set_from_dict(space, data["core_tests"])
    return PsrModel(
        space,
        core,
        np.asarray(data["psi0"], dtype=float),
        tuple(np.asarray(m, dtype=float) for m in data["M"]),
        tuple(np.asarray(v, dtype=float) for v in data["phi"]),
    )


# -- model-level operations ---------------------------------------------------


def seq_prob(model: PsrModel, history: History) -> float:
    return model.seq_prob(history)


def prediction_feature(model: PsrModel, history: History, guard: float = PSI_GUARD) -> np.ndarray:
    return model.prediction_feature(history, guard)


def check_self_consistency(model: PsrModel) -> float:
    """Largest violation of the closing-vector recursion over steps and actions."""
    worst = 0.0
    for h in range(model.space.horizon):
        summed = np.einsum("i,oaij->aj", model.phi[h + 1], model.M[h])
        worst = max(worst, float(np.abs(summed - model.phi[h][None, :]).max()))
    return worst


def terminal_anchor_violation(model: PsrModel) -> float | None:
    """Deviation of the final-step closing rows from core-test indicators.

    Only meaningful when the final core-test set has exactly one test
    matching each (obs, action): a test matches if its observation equals
    the step's observation and its action list is empty or equals the
    action.  Returns None when some pair has no unique match.
    """
    H = model.space.horizon
    tests = model.core_tests.tests[H - 1]
    worst = 0.0
    for o in range(model.space.n_obs):
        for a in range(model.space.n_actions):
            matches = [
                i
                for i, t in enumerate(tests)
                if t.obs == (o,) and (t.acts == () or t.acts == (a,))
            ]
            if len(matches) != 1:
                return None
            row = model.phi[H] @ model.M[H - 1][o, a]
            expected = np.zeros(len(tests))
            expected[matches[0]] = 1.0
            worst = max(worst, float(np.abs(row - expected).max()))
    return worst


def gamma(model: PsrModel) -> float:
    """Well-conditionedness of the representation.

    Computes the largest, over steps and over signed coordinate directions
    of the state space, policy-maximized sum of absolute closing values of
    the direction over the future tree; returns its reciprocal.  The inner
    policy maximization is exact by backward induction (observation nodes
    sum, action nodes maximize); coordinate directions suffice because the
    objective is convex on the unit cross-polytope.
    """
    return 1.0 / sup_weighted_abs(model)


def sup_weighted_abs(model: PsrModel) -> float:
    sup = 0.0
    for h in range(model.space.horizon):
        d = model.dims[h]
        for i in range(d):
            for sign in (1.0, -1.0):
                x = np.zeros(d)
                x[i] = sign
                sup = max(sup, _future_tree_max(model, h, x))
    return sup


def _future_tree_max(model: PsrModel, h: int, x: np.ndarray) -> float:
    """max over continuation policies of sum_w pi(w) |closing value of x|."""
    space = model.space
    stack = x[None, :]
    for j in range(h + 1, space.horizon + 1):
        ops = model.M[j - 1].reshape(-1, *model.M[j - 1].shape[2:])
        stack = np.einsum("kij,nj->nki", ops, stack).reshape(-1, ops.shape[1])
    vals = np.abs(stack @ model.phi[space.horizon])
    for _ in range(space.horizon - h):
        vals = vals.reshape(-1, space.n_obs, space.n_actions).max(axis=2).sum(axis=1)
    return float(vals[0])


def tv_distance(model_a: PsrModel, model_b: PsrModel, policy: Policy) -> float:
    """Policy-weighted sum of absolute trajectory-probability differences.

    Convention: no 1/2 factor, so the value lies in [0, 2] for two valid
    models.
    """
    _check_same_space(model_a, model_b)
    H = model_a.space.horizon
    weights = policy_weight_vector(policy, model_a.space)
    diff = np.abs(model_a.prob_table(H) - model_b.prob_table(H))
    return float(math.fsum(weights * diff))


def hellinger_sq(model_a: PsrModel, model_b: PsrModel, policy: Policy) -> float:
    """Squared Hellinger distance between policy-induced trajectory laws."""
    _check_same_space(model_a, model_b)
    H = model_a.space.horizon
    weights = policy_weight_vector(policy, model_a.space)
    pa = np.clip(model_a.prob_table(H), 0.0, None) * weights
    pb = np.clip(model_b.prob_table(H), 0.0, None) * weights
    return float(0.5 * math.fsum((np.sqrt(pa) - np.sqrt(pb)) ** 2))


def value(model: PsrModel, policy: Policy, leaf_fn: Callable[[History], float]) -> float:
    """Expected leaf value over the policy-induced trajectory law."""
    space = model.space
    weights = policy_weight_vector(policy, space)
    probs = model.prob_table(space.horizon)
    terms = [
        weights[idx] * probs[idx] * leaf_fn(history_from_lex(space, space.horizon, idx))
        for idx in range(space.n_trajectories)
        if weights[idx] * probs[idx] != 0.0
    ]
    return float(math.fsum(terms))


def conditional_update_violation(model: PsrModel) -> float:
    """Largest violation of the one-step feature update identity.

    For every positive-probability history and next (obs, action), applying
    the step matrix to the feature must equal the next-step feature scaled
    by the conditional observation probability.
    """
    space = model.space
    worst = 0.0
    for h in range(space.horizon):
        feats = model.feature_table(h)
        probs = model.prob_table(h)
        next_probs = model.prob_table(h + 1)
        next_feats = model.feature_table(h + 1)
        for idx in range(space.n_histories(h)):
            if probs[idx] <= PSI_GUARD:
                continue
            for pair in range(space.pair_count):
                o, a = divmod(pair, space.n_actions)
                child = idx * space.pair_count + pair
                if next_probs[child] <= PSI_GUARD:
                    continue
                lhs = model.M[h][o, a] @ feats[idx]
                cond = next_probs[child] / probs[idx]
                worst = max(worst, float(np.abs(lhs - cond * next_feats[child]).max()))
    return worst


def _check_same_space(a: PsrModel, b: PsrModel) -> None:
    if a.space != b.space:
        raise StructuralError("models live on different spaces")
