"""Datasets, finite candidate families, and constrained likelihood selection.

The hypothesis class is always a finite list of valid models built from
perturbed or discretized environment parameters (plus the truth when asked).
Selection keeps the models that give every recorded history prefix at least
a floor probability under its recorded policy, then takes the likelihood
maximizer among those within a fixed margin of the best.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import DegenerateHistory, EmptyFeasibleSet, SingularCoreTests, StructuralError
from .policies import Policy, policy_from_dict, policy_weight
from .pomdp import GMatrices, TabularPomdp, g_matrices, pomdp_to_psr
from .psr import PsrModel, check_self_consistency
from .seeding import rng_for
from .spaces import History, ObsActSpace

NEG_INF = float("-inf")
MAX_CANDIDATES = 100_000
SELF_CONSISTENCY_TOL = 1e-9


@dataclass(frozen=True)
class DataEntry:
    """One collected trajectory, its generating policy, and its step bucket."""

    trajectory: History
    policy_id: str
    split_step: int


@dataclass
class DatasetFamily:
    """Per-step buckets of entries plus the policies that produced them."""

    space: ObsActSpace
    buckets: list[list[DataEntry]]
    policies: dict[str, Policy]
    _weight_cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def empty(cls, space: ObsActSpace) -> "DatasetFamily":
        return cls(space, [[] for _ in range(space.horizon)], {})

    def add(self, entry: DataEntry, policy: Policy | None = None) -> None:
        if len(entry.trajectory) != self.space.horizon:
            raise StructuralError("entries must hold full trajectories")
        if not 0 <= entry.split_step < self.space.horizon:
            raise StructuralError("split step outside [0, H)")
        if policy is not None:
            self.policies[entry.policy_id] = policy
        if entry.policy_id not in self.policies:
            raise StructuralError(f"unknown policy id {entry.policy_id!r}")
        self.buckets[entry.split_step].append(entry)

    def all_entries(self) -> Iterable[DataEntry]:
        for bucket in self.buckets:
            yield from bucket

    def size(self) -> int:
        return sum(len(b) for b in self.buckets)

    def prefix_weight(self, entry: DataEntry, h: int) -> float:
        """Policy weight of the entry's length-h prefix, memoized."""
        key = (entry.policy_id, entry.trajectory.steps[:h])
        cached = self._weight_cache.get(key)
        if cached is None:
            cached = policy_weight(self.policies[entry.policy_id], entry.trajectory.prefix(h))
            self._weight_cache[key] = cached
        return cached

    # -- serialization (one JSON record per line) ----------------------------

    def to_jsonl(self) -> str:
        lines = []
        for entry in self.all_entries():
            lines.append(
                json.dumps(
                    {
                        "h": entry.split_step,
                        "policy_id": entry.policy_id,
                        "trajectory": [list(step) for step in entry.trajectory.steps],
                    },
                    separators=(",", ":"),
                )
            )
        return "\n".join(lines) + ("\n" if lines else "")

    def policies_to_dict(self) -> dict:
        return {pid: pol.to_dict() for pid, pol in sorted(self.policies.items())}


def dataset_from_jsonl(
    space: ObsActSpace, text: str, policies: dict[str, Policy]
) -> DatasetFamily:
    ds = DatasetFamily(space, [[] for _ in range(space.horizon)], dict(policies))
    for line in text.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        traj = History(tuple((o, a) for o, a in rec["trajectory"]))
        ds.add(DataEntry(traj, rec["policy_id"], rec["h"]))
    return ds


def policies_from_dict(data: dict, space: ObsActSpace) -> dict[str, Policy]:
    return {pid: policy_from_dict(pdata, space) for pid, pdata in data.items()}


# -- candidate families -------------------------------------------------------


@dataclass(frozen=True)
class CandidateSet:
    """Finite model family with provenance labels and source environments."""

    models: tuple[PsrModel, ...]
    labels: tuple[str, ...]
    pomdps: tuple[TabularPomdp, ...]
    config: dict

    def __post_init__(self) -> None:
        if not (len(self.models) == len(self.labels) == len(self.pomdps)):
            raise StructuralError("models, labels, and sources must align")
        if not self.models:
            raise StructuralError("candidate set may not be empty")
        for label, model in zip(self.labels, self.models):
            worst = check_self_consistency(model)
            if worst > SELF_CONSISTENCY_TOL:
                raise StructuralError(f"candidate {label} violates self-consistency by {worst:.3g}")

    def __len__(self) -> int:
        return len(self.models)

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "models": [m.to_dict() for m in self.models],
            "pomdps": [p.to_dict() for p in self.pomdps],
            "config": self.config,
        }


def candidate_set_from_dict(data: dict) -> CandidateSet:
    from .pomdp import pomdp_from_dict
    from .psr import psr_model_from_dict

    return CandidateSet(
        tuple(psr_model_from_dict(m) for m in data["models"]),
        tuple(data["labels"]),
        tuple(pomdp_from_dict(p) for p in data["pomdps"]),
        data["config"],
    )


def _perturbed_rows(rows: np.ndarray, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Renormalized multiplicative perturbation of stochastic rows."""
    noisy = rows * np.exp(scale * rng.standard_normal(rows.shape))
    return noisy / noisy.sum(axis=-1, keepdims=True)


def make_candidates(
    env: TabularPomdp,
    mode: str,
    *,
    seed: int = 0,
    n: int = 0,
    scale: float = 0.05,
    transition_scale: float | None = None,
    emission_scale: float | None = None,
    eps_grid: float = 0.5,
    window: int | None = None,
    include_true: bool = True,
    max_attempts_per_candidate: int = 20,
) -> CandidateSet:
    """Deterministic candidate family around a ground-truth environment.

    Modes: ``include_true`` (singleton truth), ``dithered`` (renormalized
    multiplicative noise on all stochastic rows), ``grid`` (simplex lattice
    of resolution ``eps_grid`` on every stochastic row).  Dithering noise
    can be scaled separately for transition and emission rows (zero freezes
    a table at the truth).  All members share the truth's core-test
    structure so their features are comparable.
    """
    g_true = g_matrices(env, window) if window is not None else _default_g(env)
    models: list[PsrModel] = []
    labels: list[str] = []
    pomdps: list[TabularPomdp] = []

    def _add(pomdp: TabularPomdp, label: str) -> bool:
        try:
            model = pomdp_to_psr(pomdp, g=g_matrices(pomdp, g_true.m))
        except (StructuralError, SingularCoreTests):
            return False
        models.append(model)
        labels.append(label)
        pomdps.append(pomdp)
        return True

    if mode == "include_true":
        _add(env, "true")
    elif mode == "dithered":
        t_scale = scale if transition_scale is None else transition_scale
        e_scale = scale if emission_scale is None else emission_scale
        if include_true:
            _add(env, "true")
        made = 0
        attempt = 0
        while made < n:
            if attempt >= n * max_attempts_per_candidate:
                raise StructuralError("dithering kept failing to produce valid candidates")
            rng = rng_for(seed, "dither", attempt)
            attempt += 1
            transition = env.transition
            if env.transition.size and t_scale > 0:
                transition = _perturbed_rows(env.transition, t_scale, rng)
            emission = _perturbed_rows(env.emission, e_scale, rng) if e_scale > 0 else env.emission
            cand = TabularPomdp(
                env.n_states, env.space, transition, emission, env.initial_state, env.reward
            )
            if _add(cand, f"perturbed(seed={seed},i={attempt - 1})"):
                made += 1
    elif mode == "grid":
        if include_true:
            _add(env, "true")
        for idx, (transition, emission) in enumerate(_grid_tables(env, eps_grid)):
            cand = TabularPomdp(
                env.n_states, env.space, transition, emission, env.initial_state, env.reward
            )
            _add(cand, f"grid({idx})")
    else:
        raise StructuralError(f"unknown candidate mode {mode!r}")

    if not models:
        raise EmptyFeasibleSet("candidate generation produced no valid models")
    return CandidateSet(
        tuple(models),
        tuple(labels),
        tuple(pomdps),
        {"mode": mode, "seed": seed, "n": n, "scale": scale, "eps_grid": eps_grid, "window": g_true.m},
    )


def _default_g(env: TabularPomdp) -> GMatrices:
    from .pomdp import default_psr

    return default_psr(env)[1]


def _simplex_lattice(dim: int, eps: float) -> list[np.ndarray]:
    """All probability vectors with entries that are multiples of eps."""
    steps = round(1.0 / eps)
    if abs(steps * eps - 1.0) > 1e-9:
        raise StructuralError("eps_grid must divide 1")
    out: list[np.ndarray] = []

    def rec(prefix: list[int], remaining: int, slots: int) -> None:
        if slots == 1:
            out.append(np.array(prefix + [remaining], dtype=float) / steps)
            return
        for k in range(remaining + 1):
            rec(prefix + [k], remaining - k, slots - 1)

    rec([], steps, dim)
    return out


def _grid_tables(env: TabularPomdp, eps: float):
    """Cartesian product of per-row lattices over transition and emission rows."""
    t_shape = env.transition.shape
    e_shape = env.emission.shape
    t_rows = int(np.prod(t_shape[:-1])) if env.transition.size else 0
    e_rows = int(np.prod(e_shape[:-1]))
    lattice_t = _simplex_lattice(t_shape[-1], eps) if t_rows else []
    lattice_e = _simplex_lattice(e_shape[-1], eps)
    total = (len(lattice_t) ** t_rows if t_rows else 1) * len(lattice_e) ** e_rows
    if total > MAX_CANDIDATES:
        raise StructuralError(f"grid would have {total} members (cap {MAX_CANDIDATES})")

    def rec(row_choices: list[np.ndarray], row: int):
        if row == t_rows + e_rows:
            flat_t = np.array(row_choices[:t_rows]).reshape(t_shape) if t_rows else env.transition
            flat_e = np.array(row_choices[t_rows:]).reshape(e_shape)
            yield flat_t, flat_e
            return
        lattice = lattice_t if row < t_rows else lattice_e
        for point in lattice:
            yield from rec(row_choices + [point], row + 1)

    yield from rec([], 0)


# -- likelihoods and selection -------------------------------------------------


def _entry_log_prob(model: PsrModel, dataset: DatasetFamily, entry: DataEntry) -> float:
    p_model = model.seq_prob(entry.trajectory)
    if p_model <= 0.0:
        return NEG_INF
    w = dataset.prefix_weight(entry, len(entry.trajectory))
    if w <= 0.0:
        return NEG_INF
    return math.log(p_model) + math.log(w)


def log_likelihood(model: PsrModel, dataset: DatasetFamily, scope: int | None = None) -> float:
    """Sum of trajectory log probabilities (policy factor included).

    ``scope`` selects one step bucket; None sums them all.  Entries the
    model cannot produce push the result to -inf.
    """
    buckets = dataset.buckets if scope is None else [dataset.buckets[scope]]
    terms = []
    for bucket in buckets:
        for entry in bucket:
            lp = _entry_log_prob(model, dataset, entry)
            if lp == NEG_INF:
                return NEG_INF
            terms.append(lp)
    return math.fsum(terms)


def theta_min_feasible(model: PsrModel, dataset: DatasetFamily, p_min: float) -> bool:
    """Every recorded prefix keeps probability at least p_min under the model."""
    for h, bucket in enumerate(dataset.buckets):
        for entry in bucket:
            prefix = entry.trajectory.prefix(h)
            p = model.seq_prob(prefix) * dataset.prefix_weight(entry, h)
            if p < p_min:
                return False
    return True


@dataclass(frozen=True)
class MleResult:
    selected_id: int
    selected_label: str
    model: PsrModel
    feasible_ids: tuple[int, ...]  # candidates within the likelihood margin
    log_likelihoods: tuple[float, ...]


class MleCache:
    """Running per-candidate sums for repeated selection on a growing dataset.

    Likelihoods are additive over entries and the stability constraint only
    ever removes candidates, so both update incrementally; selection from
    the cache matches a fresh pass up to summation order.
    """

    def __init__(self, candidates: CandidateSet, p_min: float) -> None:
        self.p_min = p_min
        self.loglik = [0.0] * len(candidates)
        self.neg_inf = [False] * len(candidates)
        self.feasible = [True] * len(candidates)
        self.seen: list[int] | None = None

    def update(self, candidates: CandidateSet, dataset: DatasetFamily) -> None:
        if self.seen is None:
            self.seen = [0] * len(dataset.buckets)
        space = dataset.space
        for h, bucket in enumerate(dataset.buckets):
            for entry in bucket[self.seen[h] :]:
                prefix_idx = entry.trajectory.prefix(h).lex_index(space)
                traj_idx = entry.trajectory.lex_index(space)
                w_prefix = dataset.prefix_weight(entry, h)
                w_full = dataset.prefix_weight(entry, space.horizon)
                for i, model in enumerate(candidates.models):
                    if self.feasible[i]:
                        p = model.prob_table(h)[prefix_idx] * w_prefix
                        if p < self.p_min:
                            self.feasible[i] = False
                    if not self.neg_inf[i]:
                        pt = model.prob_table(space.horizon)[traj_idx]
                        if pt <= 0.0 or w_full <= 0.0:
                            self.neg_inf[i] = True
                        else:
                            self.loglik[i] += math.log(pt) + math.log(w_full)
            self.seen[h] = len(bucket)


def constrained_mle(
    candidates: CandidateSet,
    dataset: DatasetFamily,
    p_min: float,
    beta: float,
    cache: MleCache | None = None,
) -> MleResult:
    """Likelihood maximizer over stable candidates, with its margin set.

    Ties break toward the lowest candidate index, so the outcome does not
    depend on evaluation order.  Passing a cache replaces the full pass
    with an incremental one over entries added since the last call.
    """
    if cache is not None:
        if cache.p_min != p_min:
            raise StructuralError("cache was built for a different p_min")
        cache.update(candidates, dataset)
        stable = [i for i in range(len(candidates)) if cache.feasible[i]]
        logliks = {i: (NEG_INF if cache.neg_inf[i] else cache.loglik[i]) for i in stable}
    else:
        stable = [
            i
            for i in range(len(candidates))
            if theta_min_feasible(candidates.models[i], dataset, p_min)
        ]
        logliks = {i: log_likelihood(candidates.models[i], dataset) for i in stable}
    if not stable:
        raise EmptyFeasibleSet(
            f"no candidate keeps all {dataset.size()} prefixes above p_min={p_min:.3g}"
        )
    best = max(logliks.values())
    margin_ids = tuple(i for i in stable if logliks[i] >= best - beta)
    selected = min(i for i in stable if logliks[i] == best)
    return MleResult(
        selected,
        candidates.labels[selected],
        candidates.models[selected],
        margin_ids,
        tuple(logliks[i] for i in stable),
    )


def conditional_tv_diagnostic(
    model_a: PsrModel, model_b: PsrModel, dataset: DatasetFamily
) -> float:
    """Summed squared conditional total-variation over recorded prefixes.

    For each bucket-``h`` entry, compares the two models' distributions of
    the remaining trajectory given the length-``h`` prefix, under the
    entry's recorded policy, by exact enumeration of the continuations.
    """
    space = model_a.space
    terms = []
    for h, bucket in enumerate(dataset.buckets):
        if not bucket:
            continue
        reps = space.pair_count ** (space.horizon - h)
        table_a = model_a.prob_table(space.horizon)
        table_b = model_b.prob_table(space.horizon)
        pa_h = model_a.prob_table(h)
        pb_h = model_b.prob_table(h)
        for entry in bucket:
            prefix = entry.trajectory.prefix(h)
            idx = prefix.lex_index(space)
            wp = dataset.prefix_weight(entry, h)
            if pa_h[idx] * wp <= 0.0 or pb_h[idx] * wp <= 0.0:
                raise DegenerateHistory(
                    f"prefix at step {h} has zero probability under a compared model"
                )
            sl = slice(idx * reps, (idx + 1) * reps)
            w = _continuation_weights(dataset.policies[entry.policy_id], prefix, space)
            tv = math.fsum(np.abs(w * (table_a[sl] / pa_h[idx] - table_b[sl] / pb_h[idx])))
            terms.append(tv * tv)
    return math.fsum(terms)


def _continuation_weights(policy: Policy, prefix: History, space: ObsActSpace) -> np.ndarray:
    """Policy weights of all continuations of a prefix, in lexicographic order."""
    start = len(prefix)
    weights = np.ones(1)
    hists = [prefix]
    for j in range(start, space.horizon):
        new_weights = np.empty(len(hists) * space.pair_count)
        new_hists = []
        for i, hist in enumerate(hists):
            base = i * space.pair_count
            for o in range(space.n_obs):
                probs = policy.action_probs(hist, o) if weights[i] > 0 else np.zeros(space.n_actions)
                new_weights[base + o * space.n_actions : base + (o + 1) * space.n_actions] = (
                    weights[i] * probs
                )
                for a in range(space.n_actions):
                    new_hists.append(hist.extend(o, a))
        weights = new_weights
        hists = new_hists
    return weights
