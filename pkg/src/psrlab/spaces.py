"""Observation/action spaces, histories, and future trajectories (tests).

Enumeration order is fixed everywhere: a step ``(o, a)`` has pair index
``o * n_actions + a`` and sequences are ordered lexicographically with the
earliest step most significant.  All exact operations in this package
enumerate trajectory trees whose size is ``(n_obs * n_actions) ** horizon``;
the cap below rejects spaces too large to enumerate.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .errors import EnumerationCapExceeded, StructuralError

DEFAULT_ENUM_CAP = 10_000_000
ENUM_CAP_ENV_VAR = "PSRLAB_ENUM_CAP"


def enum_cap() -> int:
    """Trajectory-enumeration cap, overridable via PSRLAB_ENUM_CAP."""
    raw = os.environ.get(ENUM_CAP_ENV_VAR)
    if raw is None:
        return DEFAULT_ENUM_CAP
    try:
        return int(raw)
    except ValueError as exc:
        raise StructuralError(f"{ENUM_CAP_ENV_VAR} must be an integer, got {raw!r}") from exc


@dataclass(frozen=True)
class ObsActSpace:
    """Finite observation/action alphabet over a fixed horizon."""

    n_obs: int
    n_actions: int
    horizon: int

    def __post_init__(self) -> None:
        if self.n_obs < 1 or self.n_actions < 1 or self.horizon < 1:
            raise StructuralError(
                f"space sizes must be >= 1, got O={self.n_obs} A={self.n_actions} H={self.horizon}"
            )
        cap = enum_cap()
        if self.n_trajectories > cap:
            raise EnumerationCapExceeded(
                f"(O*A)^H = {self.n_trajectories} exceeds enumeration cap {cap}"
            )

    @property
    def pair_count(self) -> int:
        return self.n_obs * self.n_actions

    @property
    def n_trajectories(self) -> int:
        return self.pair_count ** self.horizon

    def n_histories(self, h: int) -> int:
        if not 0 <= h <= self.horizon:
            raise StructuralError(f"step {h} outside [0, {self.horizon}]")
        return self.pair_count ** h


@dataclass(frozen=True)
class History:
    """Ordered (obs, action) steps; length 0 is the empty history."""

    steps: tuple[tuple[int, int], ...] = ()

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def obs(self) -> tuple[int, ...]:
        return tuple(o for o, _ in self.steps)

    @property
    def actions(self) -> tuple[int, ...]:
        return tuple(a for _, a in self.steps)

    def prefix(self, h: int) -> "History":
        if not 0 <= h <= len(self.steps):
            raise StructuralError(f"prefix length {h} outside [0, {len(self.steps)}]")
        return History(self.steps[:h])

    def extend(self, obs: int, action: int) -> "History":
        return History(self.steps + ((obs, action),))

    def validate(self, space: ObsActSpace) -> None:
        if len(self.steps) > space.horizon:
            raise StructuralError(f"history length {len(self.steps)} exceeds horizon {space.horizon}")
        for o, a in self.steps:
            if not (0 <= o < space.n_obs and 0 <= a < space.n_actions):
                raise StructuralError(f"step ({o}, {a}) outside space bounds")

    def lex_index(self, space: ObsActSpace) -> int:
        idx = 0
        for o, a in self.steps:
            idx = idx * space.pair_count + (o * space.n_actions + a)
        return idx


def history_from_lex(space: ObsActSpace, h: int, index: int) -> History:
    """Inverse of :meth:`History.lex_index` for length-``h`` histories."""
    steps: list[tuple[int, int]] = []
    for _ in range(h):
        index, pair = divmod(index, space.pair_count)
        steps.append(divmod(pair, space.n_actions))
    steps.reverse()
    return History(tuple(steps))


def enumerate_histories(space: ObsActSpace, h: int) -> list[History]:
    """All length-``h`` histories in lexicographic order."""
    return [history_from_lex(space, h, i) for i in range(space.n_histories(h))]


@dataclass(frozen=True)
class Future:
    """A test: observations (and actions) for steps ``start_step + 1`` onward.

    Two layouts occur.  A *full* future pairs every observation with an
    action.  A *short* test may stop before the horizon and may omit the
    action aligned with its last observation (that action cannot influence
    the test's probability).
    """

    start_step: int
    obs: tuple[int, ...]
    acts: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.acts) not in (len(self.obs), len(self.obs) - 1):
            raise StructuralError(
                f"test must carry len(obs) or len(obs)-1 actions, got {len(self.obs)} obs / {len(self.acts)} acts"
            )

    def __len__(self) -> int:
        return len(self.obs)

    def validate(self, space: ObsActSpace) -> None:
        if not 0 <= self.start_step < space.horizon:
            raise StructuralError(f"test start step {self.start_step} outside [0, {space.horizon})")
        if self.start_step + len(self.obs) > space.horizon:
            raise StructuralError("test extends past the horizon")
        if any(not 0 <= o < space.n_obs for o in self.obs):
            raise StructuralError("test observation outside space bounds")
        if any(not 0 <= a < space.n_actions for a in self.acts):
            raise StructuralError("test action outside space bounds")

    @property
    def is_full(self) -> bool:
        return len(self.acts) == len(self.obs)

    def as_steps(self) -> tuple[tuple[int, int], ...]:
        if not self.is_full:
            raise StructuralError("short test has no complete (obs, action) pairing")
        return tuple(zip(self.obs, self.acts))


def future_from_lex(space: ObsActSpace, start_step: int, index: int) -> Future:
    """Full future of the remaining horizon, from its lexicographic index."""
    length = space.horizon - start_step
    steps: list[tuple[int, int]] = []
    for _ in range(length):
        index, pair = divmod(index, space.pair_count)
        steps.append(divmod(pair, space.n_actions))
    steps.reverse()
    return Future(start_step, tuple(o for o, _ in steps), tuple(a for _, a in steps))


def enumerate_futures(space: ObsActSpace, start_step: int) -> list[Future]:
    """All full futures from ``start_step`` in lexicographic order."""
    count = space.pair_count ** (space.horizon - start_step)
    return [future_from_lex(space, start_step, i) for i in range(count)]


def splice(history: History, future: Future) -> History:
    """Concatenate a history with a full future starting where it ends."""
    if future.start_step != len(history):
        raise StructuralError(
            f"future starts at step {future.start_step}, history has length {len(history)}"
        )
    return History(history.steps + future.as_steps())
