"""History-dependent decision rules.

Three concrete forms, closed under the needs of the learning loops:

* :class:`DeterministicTreePolicy` -- one action per (history, obs) node,
  stored as per-step lookup arrays in lexicographic node order.
* :class:`UniformActionSeqPolicy` -- pick one action sequence uniformly at a
  start step, play it out, then pad with uniform random actions up to the
  horizon.  Sequences may be ragged, including the empty sequence (which
  makes the policy uniform over actions from its start step).
* :class:`CompositePolicy` -- one policy before a switch step, another from
  the switch step on.

Every policy exposes ``action_probs(history, obs)``; weights and samples are
derived from that single source of truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StructuralError
from .spaces import History, ObsActSpace, enumerate_histories


def uniform_policy(space: ObsActSpace) -> "UniformActionSeqPolicy":
    """Uniform over actions at every step (empty sequence + full padding)."""
    return UniformActionSeqPolicy(space.n_actions, start_step=1, sequences=((),))


@dataclass(frozen=True)
class DeterministicTreePolicy:
    """Total map (history, current obs) -> action, per step.

    ``actions_by_step[h-1]`` covers step ``h`` and has one entry per
    (length-``h-1`` history, obs) node: index = ``hist_lex * n_obs + obs``.
    """

    space: ObsActSpace
    actions_by_step: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if len(self.actions_by_step) != self.space.horizon:
            raise StructuralError("need one action table per step")
        for h, table in enumerate(self.actions_by_step, start=1):
            expected = self.space.n_histories(h - 1) * self.space.n_obs
            if table.shape != (expected,):
                raise StructuralError(f"step {h} table has shape {table.shape}, expected ({expected},)")
            if table.min() < 0 or table.max() >= self.space.n_actions:
                raise StructuralError("action index out of range in tree policy")

    def action_at(self, history: History, obs: int) -> int:
        h = len(history) + 1
        node = history.lex_index(self.space) * self.space.n_obs + obs
        return int(self.actions_by_step[h - 1][node])

    def action_probs(self, history: History, obs: int) -> np.ndarray:
        probs = np.zeros(self.space.n_actions)
        probs[self.action_at(history, obs)] = 1.0
        return probs

    def to_dict(self) -> dict:
        return {
            "type": "deterministic_tree",
            "actions": [table.tolist() for table in self.actions_by_step],
        }


@dataclass(frozen=True)
class UniformActionSeqPolicy:
    """Uniform mixture over action sequences starting at ``start_step``.

    A drawn sequence fixes the actions for the steps it covers; once it is
    exhausted (or if it is empty) every remaining step up to the horizon is
    played uniformly at random.  Behaviour before ``start_step`` is
    undefined; wrap in a :class:`CompositePolicy` for earlier steps.
    """

    n_actions: int
    start_step: int
    sequences: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        if not self.sequences:
            raise StructuralError("need at least one action sequence")
        if len(set(self.sequences)) != len(self.sequences):
            raise StructuralError("duplicate action sequences in uniform mixture")
        for seq in self.sequences:
            if any(not 0 <= a < self.n_actions for a in seq):
                raise StructuralError("action index out of range in sequence")

    def action_probs(self, history: History, obs: int) -> np.ndarray:
        # Position within the mixture: number of actions taken since start_step.
        pos = len(history) - (self.start_step - 1)
        if pos < 0:
            raise StructuralError(f"queried step {len(history) + 1} before start step {self.start_step}")
        taken = history.actions[self.start_step - 1 :]
        probs = np.zeros(self.n_actions)
        total = 0.0
        for seq in self.sequences:
            w = self._consistency_weight(seq, taken)
            if w == 0.0:
                continue
            total += w
            if pos < len(seq):
                probs[seq[pos]] += w
            else:
                probs += w / self.n_actions
        if total <= 0.0:
            raise StructuralError("history inconsistent with every mixture sequence")
        return probs / total

    def _consistency_weight(self, seq: tuple[int, ...], taken: tuple[int, ...]) -> float:
        """P(sequence chosen and its actions so far match ``taken``)."""
        overlap = min(len(seq), len(taken))
        if seq[:overlap] != taken[:overlap]:
            return 0.0
        padded = max(0, len(taken) - len(seq))
        return (1.0 / len(self.sequences)) * (1.0 / self.n_actions) ** padded

    def to_dict(self) -> dict:
        return {
            "type": "uniform_action_seq",
            "n_actions": self.n_actions,
            "start_step": self.start_step,
            "sequences": [list(s) for s in self.sequences],
        }


@dataclass(frozen=True)
class CompositePolicy:
    """Prefix policy for steps < switch_step, suffix policy from switch_step on."""

    switch_step: int
    prefix: "Policy"
    suffix: "Policy"

    def __post_init__(self) -> None:
        if self.switch_step < 1:
            raise StructuralError("switch step must be >= 1")

    def action_probs(self, history: History, obs: int) -> np.ndarray:
        step = len(history) + 1
        if step < self.switch_step:
            return self.prefix.action_probs(history, obs)
        return self.suffix.action_probs(history, obs)

    def to_dict(self) -> dict:
        return {
            "type": "composite",
            "switch_step": self.switch_step,
            "prefix": self.prefix.to_dict(),
            "suffix": self.suffix.to_dict(),
        }


Policy = DeterministicTreePolicy | UniformActionSeqPolicy | CompositePolicy


def policy_from_dict(data: dict, space: ObsActSpace) -> Policy:
    kind = data["type"]
    if kind == "deterministic_tree":
        tables = tuple(np.asarray(t, dtype=np.int64) for t in data["actions"])
        return DeterministicTreePolicy(space, tables)
    if kind == "uniform_action_seq":
        return UniformActionSeqPolicy(
            data["n_actions"], data["start_step"], tuple(tuple(s) for s in data["sequences"])
        )
    if kind == "composite":
        return CompositePolicy(
            data["switch_step"],
            policy_from_dict(data["prefix"], space),
            policy_from_dict(data["suffix"], space),
        )
    raise StructuralError(f"unknown policy type {kind!r}")


def policy_weight(policy: Policy, history: History) -> float:
    """Probability the policy emits the history's actions, given its observations."""
    weight = 1.0
    for j, (o, a) in enumerate(history.steps):
        probs = policy.action_probs(history.prefix(j), o)
        weight *= float(probs[a])
        if weight == 0.0:
            return 0.0
    return weight


def policy_weight_vector(policy: Policy, space: ObsActSpace) -> np.ndarray:
    """Weights for all full trajectories in lexicographic order."""
    weights = np.ones(1)
    for j in range(space.horizon):
        prev = weights
        weights = np.empty(len(prev) * space.pair_count)
        for idx, hist in enumerate(enumerate_histories(space, j)):
            base = idx * space.pair_count
            if prev[idx] == 0.0:
                weights[base : base + space.pair_count] = 0.0
                continue
            for o in range(space.n_obs):
                probs = policy.action_probs(hist, o)
                weights[base + o * space.n_actions : base + (o + 1) * space.n_actions] = prev[idx] * probs
    return weights


def random_tree_policy(space: ObsActSpace, rng: np.random.Generator) -> DeterministicTreePolicy:
    """Uniformly random deterministic tree policy (for test batteries)."""
    tables = tuple(
        rng.integers(0, space.n_actions, size=space.n_histories(h - 1) * space.n_obs)
        for h in range(1, space.horizon + 1)
    )
    return DeterministicTreePolicy(space, tables)


def sample_actions(policy: Policy, history: History, obs: int, rng: np.random.Generator) -> int:
    probs = policy.action_probs(history, obs)
    return int(rng.choice(len(probs), p=probs))
