"""Exact finite-horizon optimal control over finite control sets.

``solve_ocp`` is a depth-first branch and bound over the model's ordered
control set. Sequences are visited in lexicographic order and an incumbent
is only replaced by a strictly cheaper one, so among cost ties the
lexicographically smallest sequence wins. ``enumerate_oracle`` is the
brute-force reference with the same contract.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from .core import (
    STATE,
    AgentModel,
    InfoSet,
    JointConstraint,
    NeighborRecord,
    State,
    admissible,
    rollout,
)

ORACLE_BUDGET = 10**7


class EmptyAdmissibleSet(RuntimeError):
    def __init__(self, agent: int, n: int, detail: str = ""):
        self.agent = agent
        self.n = n
        self.step = None  # closed-loop step, set by the driver
        msg = f"agent {agent}: no admissible control sequence at time {n}"
        super().__init__(f"{msg} ({detail})" if detail else msg)


class BudgetExceeded(RuntimeError):
    pass


class NotConverged(RuntimeError):
    def __init__(self, value, horizon: int):
        self.value = value
        self.horizon = horizon
        super().__init__(f"value not converged up to horizon {horizon} (last value {value})")


@dataclass(frozen=True)
class Plan:
    owner: int
    solved_at: int
    horizon: int
    controls: tuple
    states: tuple
    value: Any

    def record(self) -> NeighborRecord:
        return NeighborRecord(self.owner, self.solved_at, self.horizon, self.states)

    @property
    def first_control(self):
        return self.controls[0]


def _check_horizon(model: AgentModel) -> None:
    if model.horizon < 1:
        raise ValueError(f"agent {model.id}: horizon must be at least 1, got {model.horizon}")


def _trajectory_cost(model: AgentModel, states: Sequence[State], controls: Sequence) -> Any:
    return sum((model.stage_cost(x, u) for x, u in zip(states, controls)), 0)


class _Couplings:
    """Per-depth coupling checks with neighbour data bound in advance."""

    def __init__(self, owner: int, n: int, horizon: int, info: InfoSet, couplings: Iterable[JointConstraint]):
        self.owner = owner
        self.state_checks: list[list] = [[] for _ in range(horizon + 1)]
        self.trans_checks: list[list] = [[] for _ in range(horizon)]
        own = [c for c in couplings if owner in c.scope]
        for c in own:
            recs = [info.records.get(q) for q in c.scope - {owner}]
            if any(r is None for r in recs):
                continue
            for k in range(horizon + 1):
                t = n + k
                if c.kind == STATE:
                    if all(r.covers(t) for r in recs):
                        self.state_checks[k].append((c.check, {r.source: r.at(t) for r in recs}))
                elif k < horizon and all(r.covers(t) and r.covers(t + 1) for r in recs):
                    self.trans_checks[k].append((c.check, {r.source: (r.at(t), r.at(t + 1)) for r in recs}))

    def state_ok(self, k: int, x) -> bool:
        for check, args in self.state_checks[k]:
            if not check({**args, self.owner: x}):
                return False
        return True

    def transition_ok(self, k: int, x, x_next) -> bool:
        for check, args in self.trans_checks[k]:
            if not check({**args, self.owner: (x, x_next)}):
                return False
        return True


def solve_ocp(
    model: AgentModel,
    x0: State,
    n: int,
    info: InfoSet,
    couplings: Iterable[JointConstraint] = (),
    *,
    prune: bool = True,
    atol: float = 0,
) -> Plan:
    """Minimise the truncated cost over admissible sequences of length ``model.horizon``.

    With ``prune=False`` only admissibility pruning remains (incumbent and
    lower-bound pruning are switched off); the result must not change.
    ``atol`` is the tie tolerance for float-valued costs.
    """
    _check_horizon(model)
    info.validate(n)
    N = model.horizon
    checks = _Couplings(model.id, n, N, info, couplings)
    if not (model.local_state_ok(x0) and checks.state_ok(0, x0)):
        raise EmptyAdmissibleSet(model.id, n, "initial state violates constraints")

    controls = model.controls
    step, cost, local_ok = model.step, model.stage_cost, model.local_state_ok
    bound = model.cost_lower_bound if prune else None
    best_cost = None
    best_seq = None
    seq: list = [None] * N
    states: list = [None] * (N + 1)
    states[0] = x0

    def dfs(k: int, acc) -> None:
        nonlocal best_cost, best_seq
        x = states[k]
        stage = [cost(x, u) for u in controls]
        for u, c in zip(controls, stage):
            total = acc + c
            if prune and best_cost is not None:
                remaining = N - k - 1
                lb = total + (bound(step(x, u), remaining) if bound and remaining else 0)
                if lb >= best_cost - atol:
                    continue
            x_next = step(x, u)
            if not (local_ok(x_next) and checks.state_ok(k + 1, x_next) and checks.transition_ok(k, x, x_next)):
                continue
            seq[k] = u
            states[k + 1] = x_next
            if k + 1 == N:
                if best_cost is None or total < best_cost - atol:
                    best_cost = total
                    best_seq = tuple(seq)
            else:
                dfs(k + 1, total)

    dfs(0, 0)
    if best_seq is None:
        raise EmptyAdmissibleSet(model.id, n)
    traj = rollout(model, x0, best_seq, n)
    return Plan(model.id, n, N, best_seq, traj.states, best_cost)


def enumerate_oracle(
    model: AgentModel,
    x0: State,
    n: int,
    info: InfoSet,
    couplings: Iterable[JointConstraint] = (),
    *,
    atol: float = 0,
) -> Plan:
    """Brute force over every control sequence; same tie-break as ``solve_ocp``."""
    _check_horizon(model)
    N = model.horizon
    couplings = tuple(couplings)
    if len(model.controls) ** N > ORACLE_BUDGET:
        raise BudgetExceeded(f"{len(model.controls)}^{N} sequences exceed the oracle budget {ORACLE_BUDGET}")
    best = None
    for seq in itertools.product(model.controls, repeat=N):
        if not admissible(model, x0, n, info, couplings, seq):
            continue
        traj = rollout(model, x0, seq, n)
        value = _trajectory_cost(model, traj.states, seq)
        if best is None or value < best[0] - atol:
            best = (value, seq, traj.states)
    if best is None:
        raise EmptyAdmissibleSet(model.id, n)
    return Plan(model.id, n, N, best[1], best[2], best[0])


def approx_infinite_value(
    model: AgentModel,
    x0: State,
    info: InfoSet,
    cutoff: int,
    couplings: Iterable[JointConstraint] = (),
    *,
    n: int = 0,
    start: int = 1,
    strict: bool = True,
):
    """Increase the horizon until the value settles with the plan resting at the reference.

    Returns ``(value, converged)``. Without convergence by ``cutoff`` this
    raises NotConverged, or returns ``(last value, False)`` when
    ``strict=False``; the last value is then only a lower estimate.
    """
    if cutoff < 1:
        raise ValueError("cutoff must be at least 1")
    couplings = tuple(couplings)
    previous = None
    value = None
    for N in range(max(1, start), cutoff + 1):
        plan = solve_ocp(model.with_horizon(N), x0, n, info, couplings)
        value = plan.value
        # the terminal state is not costed, so look at the last costed one
        if previous is not None and value == previous and plan.states[-2] == model.reference:
            return value, True
        previous = value
    if strict:
        raise NotConverged(value, cutoff)
    return value, False
