"""Ground-truth tabular POMDP environments and their exact quantities.

Conventions.  An episode runs ``o_1, a_1, ..., o_H, a_H``: the hidden state
starts at the fixed ``initial_state``, each ``o_h`` is emitted from the
current state via ``emission[h-1]``, and after ``a_h`` the state advances via
``transition[h-1][a_h]`` (no transition after the final action).  All exact
computations run forward recursions over hidden states; tests in this repo
check them against exponential brute-force sums over state sequences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    RejectionBudgetExhausted,
    SingularCoreTests,
    StructuralError,
)
from .policies import Policy, sample_actions
from .psr import CoreTestSet, PsrModel, make_core_test_set
from .seeding import rng_for
from .spaces import (
    Future,
    History,
    ObsActSpace,
    enumerate_futures,
    enumerate_histories,
)

ROW_SUM_TOL = 1e-12
PINV_RCOND = 1e-10
MAX_CONDITION = 1e10


@dataclass(frozen=True)
class RewardTable:
    """Per-step reward on (obs, action); trajectory reward is the sum over steps."""

    table: np.ndarray  # (H, O, A), entrywise >= 0 with sum_h max_{o,a} <= 1

    def __post_init__(self) -> None:
        if self.table.min() < 0:
            raise StructuralError("reward table must be nonnegative")
        if self.table.max(axis=(1, 2)).sum() > 1 + 1e-9:
            raise StructuralError("per-step reward maxima must sum to at most 1")

    def of(self, trajectory: History) -> float:
        return float(math.fsum(self.table[h, o, a] for h, (o, a) in enumerate(trajectory.steps)))


@dataclass(frozen=True)
class TrajectoryReward:
    """Arbitrary map from full trajectories into [0, 1]. Not serializable."""

    fn: Callable[[History], float]

    def of(self, trajectory: History) -> float:
        r = float(self.fn(trajectory))
        if not 0.0 <= r <= 1.0 + 1e-12:
            raise StructuralError(f"trajectory reward {r} outside [0, 1]")
        return r


Reward = RewardTable | TrajectoryReward


@dataclass(frozen=True)
class TabularPomdp:
    """Tabular POMDP with deterministic initial state and per-step tables."""

    n_states: int
    space: ObsActSpace
    transition: np.ndarray  # (H-1, A, S, S), T[h-1, a, s, s'] row-stochastic over s'
    emission: np.ndarray  # (H, S, O), row-stochastic over o
    initial_state: int
    reward: Reward

    def __post_init__(self) -> None:
        S, H, A, O = self.n_states, self.space.horizon, self.space.n_actions, self.space.n_obs
        if self.transition.shape != (H - 1, A, S, S):
            raise StructuralError(f"transition shape {self.transition.shape} != {(H - 1, A, S, S)}")
        if self.emission.shape != (H, S, O):
            raise StructuralError(f"emission shape {self.emission.shape} != {(H, S, O)}")
        if not 0 <= self.initial_state < S:
            raise StructuralError("initial state out of range")
        for name, arr in (("transition", self.transition), ("emission", self.emission)):
            if arr.size and arr.min() < 0:
                raise StructuralError(f"{name} has negative entries")
            if arr.size and np.abs(arr.sum(axis=-1) - 1.0).max() > ROW_SUM_TOL:
                raise StructuralError(f"{name} rows must sum to 1")

    def reward_of(self, trajectory: History) -> float:
        return self.reward.of(trajectory)

    # -- forward recursions -------------------------------------------------

    def pre_emission_belief(self, history: History) -> np.ndarray:
        """Unnormalized distribution of the state after ``history``.

        Entry ``s`` is P(state at step h+1 = s, history's obs | history's
        actions) for a length-``h`` history.  Only defined for h < H.
        """
        if len(history) >= self.space.horizon:
            raise StructuralError("no post-history state after the final step")
        v = np.zeros(self.n_states)
        v[self.initial_state] = 1.0
        for h, (o, a) in enumerate(history.steps, start=1):
            u = self.emission[h - 1, :, o] * v
            v = self.transition[h - 1, a].T @ u
        return v

    def exact_traj_prob(self, history: History) -> float:
        """P(history's observations | history's actions), exactly."""
        history.validate(self.space)
        if len(history) == 0:
            return 1.0
        v = np.zeros(self.n_states)
        v[self.initial_state] = 1.0
        u = v
        for h, (o, a) in enumerate(history.steps, start=1):
            u = self.emission[h - 1, :, o] * v
            if h < self.space.horizon:
                v = self.transition[h - 1, a].T @ u
        return float(u.sum())

    def test_prob_given_state(self, test: Future, state_step: int) -> np.ndarray:
        """P(test obs | state at ``state_step`` = s, test actions), for all s.

        ``state_step`` is the 1-based step at which the test's first
        observation is emitted (``test.start_step + 1``).
        """
        # Walk the test backwards: out[s] = P(obs from position j on | state s).
        out = np.ones(self.n_states)
        for j in range(len(test.obs) - 1, -1, -1):
            step = state_step + j
            emit = self.emission[step - 1, :, test.obs[j]]
            if j == len(test.obs) - 1:
                out = emit.copy()
            else:
                out = emit * (self.transition[step - 1, test.acts[j]] @ out)
        return out

    # -- sampling -----------------------------------------------------------

    def sample_episode(self, policy: Policy, rng_seed: int) -> History:
        """One full trajectory under ``policy``; deterministic given the seed."""
        rng = np.random.default_rng(rng_seed)
        state = self.initial_state
        hist = History()
        for h in range(1, self.space.horizon + 1):
            obs = int(rng.choice(self.space.n_obs, p=self.emission[h - 1, state]))
            action = sample_actions(policy, hist, obs, rng)
            hist = hist.extend(obs, action)
            if h < self.space.horizon:
                state = int(rng.choice(self.n_states, p=self.transition[h - 1, action, state]))
        return hist

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        if not isinstance(self.reward, RewardTable):
            raise StructuralError("only table rewards are serializable")
        return {
            "S": self.n_states,
            "O": self.space.n_obs,
            "A": self.space.n_actions,
            "H": self.space.horizon,
            "T": self.transition.tolist(),
            "Obs": self.emission.tolist(),
            "s1": self.initial_state,
            "reward": self.reward.table.tolist(),
        }


def pomdp_from_dict(data: dict) -> TabularPomdp:
    space = ObsActSpace(data["O"], data["A"], data["H"])
    return TabularPomdp(
        n_states=data["S"],
        space=space,
        transition=np.asarray(data["T"], dtype=float),
        emission=np.asarray(data["Obs"], dtype=float),
        initial_state=data["s1"],
        reward=RewardTable(np.asarray(data["reward"], dtype=float)),
    )


def exact_traj_prob(pomdp: TabularPomdp, history: History) -> float:
    return pomdp.exact_traj_prob(history)


def sample_episode(pomdp: TabularPomdp, policy: Policy, rng_seed: int) -> History:
    return pomdp.sample_episode(policy, rng_seed)


# -- dynamics matrices and core tests ---------------------------------------


def dynamics_matrix(pomdp: TabularPomdp, h: int) -> np.ndarray:
    """Histories-by-futures matrix of joint probabilities at step ``h``.

    Rows are length-``h`` histories and columns full futures, both in
    lexicographic order; the entry is the joint probability of the spliced
    trajectory's observations given its actions.
    """
    space = pomdp.space
    rows = space.n_histories(h)
    cols = space.pair_count ** (space.horizon - h)
    out = np.empty((rows, cols))
    for i, hist in enumerate(enumerate_histories(space, h)):
        for j, fut in enumerate(enumerate_futures(space, h)):
            out[i, j] = pomdp.exact_traj_prob(History(hist.steps + fut.as_steps()))
    return out


def psr_rank(matrix: np.ndarray, tol: float = 1e-8) -> int:
    """Number of singular values above ``tol`` times the largest one."""
    if matrix.size == 0:
        return 0
    svals = np.linalg.svd(matrix, compute_uv=False)
    if svals.size == 0 or svals[0] == 0.0:
        return 0
    return int(np.sum(svals > tol * svals[0]))


def select_core_tests(pomdp: TabularPomdp, h: int, tol: float = 1e-8) -> list[Future]:
    """Greedy pivoted column selection on the step-``h`` dynamics matrix.

    Returns r = rank(D_h) full futures whose columns span the column space.
    Pivot = largest residual norm, ties to the lexicographically smallest
    column, so the selection is deterministic.
    """
    D = dynamics_matrix(pomdp, h)
    r = psr_rank(D, tol)
    residual = D.copy()
    selected: list[int] = []
    basis: list[np.ndarray] = []
    for _ in range(r):
        norms = np.linalg.norm(residual, axis=0)
        pick = int(np.argmax(norms))  # first occurrence wins ties
        q = residual[:, pick]
        q = q / np.linalg.norm(q)
        basis.append(q)
        selected.append(pick)
        residual = residual - np.outer(q, q @ residual)
    tests = [enumerate_futures(pomdp.space, h)[j] for j in sorted(selected)]
    if psr_rank(D[:, sorted(selected)], tol) != r:
        raise SingularCoreTests(f"pivoted selection at step {h} lost rank")
    return tests


# -- m-step emission-action matrices ----------------------------------------


def window_tests(space: ObsActSpace, state_step: int, m: int) -> list[Future]:
    """Short tests from ``state_step``: min(m, H - state_step + 1) obs, one fewer action."""
    t = min(m, space.horizon - state_step + 1)
    tests: list[Future] = []
    for idx in range(space.n_obs**t * space.n_actions ** (t - 1)):
        digits: list[int] = []
        rem = idx
        sizes = [space.n_obs if k % 2 == 0 else space.n_actions for k in range(2 * t - 1)]
        for size in reversed(sizes):
            rem, d = divmod(rem, size)
            digits.append(d)
        digits.reverse()
        obs = tuple(digits[0::2])
        acts = tuple(digits[1::2])
        tests.append(Future(state_step - 1, obs, acts))
    return tests


@dataclass(frozen=True)
class GMatrices:
    """Per-step test-probability matrices over hidden states.

    ``matrices[h-1]`` has one row per window test whose first observation is
    emitted at step ``h`` and one column per hidden state.
    """

    m: int
    tests: tuple[tuple[Future, ...], ...]  # indexed by state step h = 1..H
    matrices: tuple[np.ndarray, ...]

    def matrix_at(self, state_step: int) -> np.ndarray:
        return self.matrices[state_step - 1]

    def tests_at(self, state_step: int) -> tuple[Future, ...]:
        return self.tests[state_step - 1]


def g_matrices(pomdp: TabularPomdp, m: int) -> GMatrices:
    """Exact window-test probability matrices for every state step."""
    if m < 1:
        raise StructuralError("window length m must be >= 1")
    tests_all: list[tuple[Future, ...]] = []
    mats: list[np.ndarray] = []
    for h in range(1, pomdp.space.horizon + 1):
        tests = tuple(window_tests(pomdp.space, h, m))
        G = np.stack([pomdp.test_prob_given_state(t, h) for t in tests])
        tests_all.append(tests)
        mats.append(G)
    return GMatrices(m, tuple(tests_all), tuple(mats))


def decodability_alpha(g: GMatrices) -> float:
    """Smallest S-th singular value over the per-step test matrices."""
    alpha = math.inf
    for G in g.matrices:
        svals = np.linalg.svd(G, compute_uv=False)
        n_states = G.shape[1]
        sigma = svals[n_states - 1] if len(svals) >= n_states else 0.0
        alpha = min(alpha, float(sigma))
    return alpha


# -- POMDP -> PSR construction ----------------------------------------------


def _transition_operator(pomdp: TabularPomdp, h: int, o: int, a: int) -> np.ndarray:
    """Matrix sending the pre-emission state belief at step h to step h+1."""
    emit = pomdp.emission[h - 1, :, o]
    if h < pomdp.space.horizon:
        return pomdp.transition[h - 1, a].T * emit[None, :]
    # No transition after the final observation; condition on it in place.
    return np.diag(emit)


def _reachable_belief_basis(pomdp: TabularPomdp) -> list[np.ndarray]:
    """Orthonormal bases of the reachable pre-emission belief spans, per step."""
    S = pomdp.n_states
    e0 = np.zeros((S, 1))
    e0[pomdp.initial_state, 0] = 1.0
    bases = [e0]
    for h in range(1, pomdp.space.horizon):
        V = bases[-1]
        cols = [
            _transition_operator(pomdp, h, o, a) @ V
            for o in range(pomdp.space.n_obs)
            for a in range(pomdp.space.n_actions)
        ]
        stacked = np.hstack(cols)
        u, svals, _ = np.linalg.svd(stacked, full_matrices=False)
        rank = max(1, int(np.sum(svals > 1e-12 * max(svals[0], 1e-300))))
        bases.append(u[:, :rank])
    return bases


def _test_matrices(pomdp: TabularPomdp, tests_per_step: list[tuple[Future, ...]]) -> list[np.ndarray]:
    """Test-probability matrices for state steps 1..H plus the terminal ones-row."""
    mats = [
        np.stack([pomdp.test_prob_given_state(t, h) for t in tests])
        for h, tests in enumerate(tests_per_step, start=1)
    ]
    mats.append(np.ones((1, pomdp.n_states)))
    return mats


def _core_tests_from_g(g: GMatrices, space: ObsActSpace) -> CoreTestSet:
    tests = [g.tests_at(h + 1) for h in range(space.horizon)]
    return make_core_test_set(space, tests)


def pomdp_to_psr(
    pomdp: TabularPomdp,
    core_tests: CoreTestSet | None = None,
    g: GMatrices | None = None,
) -> PsrModel:
    """Build the predictive-state representation of a tabular POMDP.

    Either pass explicit ``core_tests`` (e.g. from :func:`select_core_tests`)
    or window-test matrices ``g`` (from :func:`g_matrices`).  With ``g`` the
    parameters come from pseudo-inverting the full-column-rank test matrices;
    with explicit tests the linear systems are solved on the reachable belief
    span, which only needs the tests to span the step's dynamics rank.
    """
    if (core_tests is None) == (g is None):
        raise StructuralError("pass exactly one of core_tests or g")
    space = pomdp.space
    if g is not None:
        core = _core_tests_from_g(g, space)
        gmats = list(g.matrices) + [np.ones((1, pomdp.n_states))]
        return _psr_from_pinv(pomdp, core, gmats)
    assert core_tests is not None
    gmats = _test_matrices(pomdp, [tuple(core_tests.tests[h]) for h in range(space.horizon)])
    return _psr_from_belief_span(pomdp, core_tests, gmats)


def _psr_from_pinv(pomdp: TabularPomdp, core: CoreTestSet, gmats: list[np.ndarray]) -> PsrModel:
    space = pomdp.space
    pinvs = []
    for h, G in enumerate(gmats[:-1], start=1):
        svals = np.linalg.svd(G, compute_uv=False)
        smin = svals[pomdp.n_states - 1] if len(svals) >= pomdp.n_states else 0.0
        if smin <= 0 or svals[0] / smin > MAX_CONDITION:
            raise SingularCoreTests(f"test matrix at step {h} has condition > {MAX_CONDITION:g}")
        pinvs.append(np.linalg.pinv(G, rcond=PINV_RCOND))
    M: list[np.ndarray] = []
    for h in range(1, space.horizon):
        G_next = gmats[h]  # state step h+1
        ops = np.empty((space.n_obs, space.n_actions, G_next.shape[0], gmats[h - 1].shape[0]))
        for o in range(space.n_obs):
            for a in range(space.n_actions):
                ops[o, a] = G_next @ _transition_operator(pomdp, h, o, a) @ pinvs[h - 1]
        M.append(ops)
    # Final step: the window tests there are the single next observations, so
    # the last matrices reduce to exact indicator rows (anchored closing).
    d_last = gmats[space.horizon - 1].shape[0]
    terminal = np.zeros((space.n_obs, space.n_actions, 1, d_last))
    for o in range(space.n_obs):
        terminal[o, :, 0, o] = 1.0
    M.append(terminal)
    ones = np.ones(pomdp.n_states)
    phi = [p.T @ ones for p in pinvs[:-1]] + [np.ones(d_last), np.ones(1)]
    e0 = np.zeros(pomdp.n_states)
    e0[pomdp.initial_state] = 1.0
    psi0 = gmats[0] @ e0
    return PsrModel(space, core, psi0, tuple(M), tuple(phi))


def _psr_from_belief_span(pomdp: TabularPomdp, core: CoreTestSet, gmats: list[np.ndarray]) -> PsrModel:
    space = pomdp.space
    bases = _reachable_belief_basis(pomdp)
    # A_h = G_{h+1} V_h restricted to the reachable span; must have full row rank.
    A = [gmats[h] @ bases[h] for h in range(space.horizon)]
    for h, mat in enumerate(A):
        svals = np.linalg.svd(mat, compute_uv=False)
        want = gmats[h].shape[0]
        smin = svals[want - 1] if len(svals) >= want else 0.0
        if smin <= 0 or svals[0] / smin > MAX_CONDITION:
            raise SingularCoreTests(
                f"core tests at step {h} do not span their dynamics (condition > {MAX_CONDITION:g})"
            )
    M: list[np.ndarray] = []
    for h in range(1, space.horizon + 1):
        G_next = gmats[h]
        V = bases[h - 1]
        A_pinv = np.linalg.pinv(A[h - 1], rcond=PINV_RCOND)
        ops = np.empty((space.n_obs, space.n_actions, G_next.shape[0], gmats[h - 1].shape[0]))
        for o in range(space.n_obs):
            for a in range(space.n_actions):
                X = G_next @ _transition_operator(pomdp, h, o, a) @ V
                ops[o, a] = X @ A_pinv
                if np.abs(ops[o, a] @ A[h - 1] - X).max() > 1e-8:
                    raise SingularCoreTests(
                        f"core tests at step {h - 1} cannot express the step-{h} update"
                    )
        M.append(ops)
    phi = []
    for h in range(space.horizon):
        target = bases[h].T.sum(axis=1)  # V_h^T 1
        vec = np.linalg.pinv(A[h], rcond=PINV_RCOND).T @ target
        if np.abs(vec @ A[h] - target).max() > 1e-8:
            raise SingularCoreTests(f"core tests at step {h} cannot express total mass")
        phi.append(vec)
    phi.append(np.ones(1))
    e0 = np.zeros(pomdp.n_states)
    e0[pomdp.initial_state] = 1.0
    psi0 = gmats[0] @ e0
    return PsrModel(space, core, psi0, tuple(M), tuple(phi))


def default_psr(pomdp: TabularPomdp, alpha_floor: float = 1e-8) -> tuple[PsrModel, GMatrices]:
    """PSR via the smallest decodability window that is numerically sound."""
    last_alpha = 0.0
    for m in range(1, pomdp.space.horizon + 1):
        g = g_matrices(pomdp, m)
        last_alpha = decodability_alpha(g)
        if last_alpha > alpha_floor:
            return pomdp_to_psr(pomdp, g=g), g
    raise SingularCoreTests(f"no decodable window up to m=H (best alpha {last_alpha:.3g})")


# -- builtin environments ----------------------------------------------------


def _scaled_reward(raw: np.ndarray) -> RewardTable:
    total = raw.max(axis=(1, 2)).sum()
    return RewardTable(raw / total if total > 0 else raw)


def random_revealing(
    seed: int,
    n_states: int,
    n_obs: int,
    n_actions: int,
    horizon: int,
    dirichlet_conc: float = 1.0,
    alpha_threshold: float = 0.1,
    max_draws: int = 1000,
) -> TabularPomdp:
    """Random POMDP whose single-step test matrices are well separated.

    Draws transition and emission rows from a Dirichlet and rejects until
    the one-step decodability value is at least ``alpha_threshold``.
    """
    if n_obs < n_states:
        raise StructuralError("revealing construction requires n_obs >= n_states")
    space = ObsActSpace(n_obs, n_actions, horizon)
    for attempt in range(max_draws):
        rng = rng_for(seed, "random_revealing", attempt)
        conc = dirichlet_conc
        transition = rng.dirichlet(np.full(n_states, conc), size=(horizon - 1, n_actions, n_states))
        emission = rng.dirichlet(np.full(n_obs, conc), size=(horizon, n_states))
        raw = rng.random((horizon, n_obs, n_actions))
        pomdp = TabularPomdp(n_states, space, transition, emission, 0, _scaled_reward(raw))
        if decodability_alpha(g_matrices(pomdp, 1)) >= alpha_threshold:
            return pomdp
    raise RejectionBudgetExhausted(
        f"no draw reached one-step alpha >= {alpha_threshold} in {max_draws} attempts"
    )


def tiger(horizon: int) -> TabularPomdp:
    """Two hidden tiger positions, noisy directional hearing, three actions.

    Observations are what listening reveals (hear-left / hear-right, 85%
    accurate).  Opening the door away from the heard side pays; listening
    pays a small amount.  The tiger drifts between steps so beliefs stay
    informative.
    """
    space = ObsActSpace(2, 3, horizon)
    stay = np.array([[0.9, 0.1], [0.1, 0.9]])
    shuffle = np.full((2, 2), 0.5)
    transition = np.stack(
        [np.stack([stay, shuffle, shuffle]) for _ in range(horizon - 1)]
    ) if horizon > 1 else np.zeros((0, 3, 2, 2))
    emission = np.stack([np.array([[0.85, 0.15], [0.15, 0.85]]) for _ in range(horizon)])
    w = 1.0 / horizon
    step = np.array(
        [
            # actions: listen, open-left, open-right; obs: hear-left, hear-right
            [0.1 * w, 0.0, w],
            [0.1 * w, w, 0.0],
        ]
    )
    reward = RewardTable(np.stack([step for _ in range(horizon)]))
    return TabularPomdp(2, space, transition, emission, 0, reward)


def near_tie() -> TabularPomdp:
    """Two-step instance whose first-step decisions sit near value ties.

    Action 0 steers the hidden state toward the rewarding second
    observation but pays nothing now; action 1 pays immediately.  The two
    first-observation branches carry different immediate payments, so the
    two decision nodes have staggered net margins (about 0.105 and 0.036)
    between the long-run and the greedy action.  Useful for data-size
    sweeps: mild value pessimism flips these decisions until the data
    resolves them.
    """
    space = ObsActSpace(2, 2, 2)
    transition = np.array(
        [[
            [[0.9, 0.1], [0.5, 0.5]],
            [[0.6, 0.4], [0.4, 0.6]],
        ]]
    )
    emission = np.array(
        [
            [[0.5, 0.5], [0.5, 0.5]],
            [[0.95, 0.05], [0.05, 0.95]],
        ]
    )
    reward = RewardTable(
        np.array(
            [
                [[0.0, 0.105], [0.0, 0.175]],
                [[0.78, 0.78], [0.0, 0.0]],
            ]
        )
    )
    return TabularPomdp(2, space, transition, emission, 0, reward)


def random_mdp(seed: int, n_states: int, n_actions: int, horizon: int) -> TabularPomdp:
    """Fully observable MDP encoded as a POMDP with identity emissions."""
    space = ObsActSpace(n_states, n_actions, horizon)
    rng = rng_for(seed, "random_mdp")
    transition = rng.dirichlet(np.ones(n_states), size=(horizon - 1, n_actions, n_states))
    emission = np.stack([np.eye(n_states) for _ in range(horizon)])
    raw = rng.random((horizon, n_states, n_actions))
    return TabularPomdp(n_states, space, transition, emission, 0, _scaled_reward(raw))


BUILTIN_ENVS = {
    "random_revealing": random_revealing,
    "tiger": tiger,
    "random_mdp": random_mdp,
    "near_tie": near_tie,
}
