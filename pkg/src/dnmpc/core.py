"""Agent models, coupling constraints and admissibility of control sequences.

States and controls are opaque hashable values (tuples of ints for grid
worlds). Costs are ints/Fractions in exact mode, floats otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Hashable, Iterable, Mapping, Sequence

State = Hashable
Control = Hashable

STATE = "state"
TRANSITION = "transition"


class MalformedInfo(ValueError):
    """A neighbour record does not match its declared horizon or time."""


@dataclass(frozen=True)
class AgentModel:
    id: int
    step: Callable[[State, Control], State]
    controls: tuple
    local_state_ok: Callable[[State], bool]
    stage_cost: Callable[[State, Control], Any]
    reference: State
    horizon: int
    neutral: Control
    # lower bound on the cost of `steps` stages started from `state`
    cost_lower_bound: Callable[[State, int], Any] | None = None

    def __post_init__(self):
        if not self.controls:
            raise ValueError(f"agent {self.id}: empty control set")
        if self.neutral not in self.controls:
            raise ValueError(f"agent {self.id}: neutral control not in control set")

    def with_horizon(self, horizon: int) -> AgentModel:
        return replace(self, horizon=horizon)


@dataclass(frozen=True)
class JointConstraint:
    """Coupling between agents in `scope`.

    For ``kind == "state"`` the check receives ``{agent: state}``; for
    ``kind == "transition"`` it receives ``{agent: (state, next_state)}``.
    """

    name: str
    scope: frozenset
    kind: str
    check: Callable[[Mapping[int, Any]], bool]

    def __post_init__(self):
        if len(self.scope) < 2:
            raise ValueError(f"{self.name}: coupling scope needs at least two agents")
        if self.kind not in (STATE, TRANSITION):
            raise ValueError(f"{self.name}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class NeighborRecord:
    source: int
    solved_at: int
    horizon: int
    states: tuple

    def validate(self) -> None:
        if len(self.states) != self.horizon + 1:
            raise MalformedInfo(
                f"record of agent {self.source}: {len(self.states)} states for horizon {self.horizon}"
            )
        if self.horizon < 0 or self.solved_at < 0:
            raise MalformedInfo(f"record of agent {self.source}: negative time or horizon")

    def covers(self, t: int) -> bool:
        return self.solved_at <= t <= self.solved_at + self.horizon

    def at(self, t: int) -> State:
        """Predicted state at absolute time `t`."""
        return self.states[t - self.solved_at]


@dataclass(frozen=True)
class InfoSet:
    owner: int
    records: Mapping[int, NeighborRecord] = field(default_factory=dict)

    def __post_init__(self):
        if self.owner in self.records:
            raise MalformedInfo(f"agent {self.owner} cannot hold a record about itself")
        for source, rec in self.records.items():
            if rec.source != source:
                raise MalformedInfo(f"record keyed {source} claims source {rec.source}")

    @classmethod
    def of(cls, owner: int, records: Iterable[NeighborRecord] = ()) -> InfoSet:
        return cls(owner, {r.source: r for r in records})

    def validate(self, n: int | None = None) -> None:
        for rec in self.records.values():
            rec.validate()
            if n is not None and rec.solved_at > n:
                raise MalformedInfo(
                    f"record of agent {rec.source} solved at {rec.solved_at} is newer than time {n}"
                )


@dataclass(frozen=True)
class Trajectory:
    start_time: int
    states: tuple
    controls: tuple


@dataclass(frozen=True)
class Violation:
    k: int
    constraint: str
    inducers: tuple = ()

    def sort_key(self):
        return (self.k, self.constraint, self.inducers)


@dataclass(frozen=True)
class Verdict:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def rollout(model: AgentModel, x0: State, controls: Sequence[Control], start_time: int = 0) -> Trajectory:
    states = [x0]
    for u in controls:
        states.append(model.step(states[-1], u))
    return Trajectory(start_time, tuple(states), tuple(controls))


def prediction_index_set(info: InfoSet, n: int, k: int) -> set[int]:
    """Neighbours whose stored prediction still covers absolute time ``n + k``."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    return {q for q, rec in info.records.items() if n + k <= rec.solved_at + rec.horizon}


def project_scope(
    couplings: Iterable[JointConstraint], ids: Iterable[int], owner: int | None = None
) -> set[JointConstraint]:
    allowed = set(ids)
    if owner is not None:
        allowed.add(owner)
    return {c for c in couplings if c.scope <= allowed}


def coupling_violations(
    owner: int,
    states: Sequence[State],
    n: int,
    info: InfoSet,
    couplings: Iterable[JointConstraint],
    ks: Iterable[int] | None = None,
) -> list[Violation]:
    """Coupling violations of `owner`'s predicted `states` (index k = absolute time n + k).

    Only couplings that contain the owner and whose remaining scope lies
    inside the neighbours covering the relevant absolute time are checked.
    Transition couplings are checked on (k, k+1) when every neighbour
    covers n + k + 1.
    """
    own = [c for c in couplings if owner in c.scope]
    if not own or not info.records:
        return []
    out = []
    last = len(states) - 1
    for k in range(last + 1) if ks is None else ks:
        t = n + k
        for c in own:
            others = c.scope - {owner}
            recs = [info.records.get(q) for q in others]
            if any(r is None for r in recs):
                continue
            if c.kind == STATE:
                if not all(r.covers(t) for r in recs):
                    continue
                args = {r.source: r.at(t) for r in recs}
                args[owner] = states[k]
            else:
                if k == last or not all(r.covers(t) and r.covers(t + 1) for r in recs):
                    continue
                args = {r.source: (r.at(t), r.at(t + 1)) for r in recs}
                args[owner] = (states[k], states[k + 1])
            if not c.check(args):
                out.append(Violation(k, c.name, tuple(sorted(others))))
    return out


def admissible(
    model: AgentModel,
    x0: State,
    n: int,
    info: InfoSet,
    couplings: Iterable[JointConstraint],
    controls: Sequence[Control],
) -> Verdict:
    """Check a finite control sequence against controls, local and coupled constraints."""
    info.validate(n)
    control_set = set(model.controls)
    violations = [Violation(k, "control") for k, u in enumerate(controls) if u not in control_set]
    if violations:
        return Verdict(tuple(violations))
    traj = rollout(model, x0, controls, n)
    violations = [Violation(k, "local") for k, x in enumerate(traj.states) if not model.local_state_ok(x)]
    violations += coupling_violations(model.id, traj.states, n, info, couplings)
    return Verdict(tuple(sorted(violations, key=Violation.sort_key)))
