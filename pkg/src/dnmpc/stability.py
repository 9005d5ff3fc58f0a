"""Certificates computed on closed-loop traces.

The relaxed Lyapunov degree of a value/cost sequence is the largest alpha
in (0, 1] with ``V(n) >= V(n+1) + alpha * l(n)`` at every recorded step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

from .bridge import Scenario, bridge_cost
from .core import InfoSet, NeighborRecord, coupling_violations
from .simulation import RunTrace
from .solver import approx_infinite_value


class TraceTooShort(ValueError):
    pass


class NonmonotoneWeights(ValueError):
    pass


class ClosedLoopNotConverged(RuntimeError):
    pass


class ChainViolated(AssertionError):
    def __init__(self, which: str, lhs, rhs):
        self.which = which
        super().__init__(f"{which}: {lhs} > {rhs}")


class BoundViolated(AssertionError):
    def __init__(self, n: int, which: str, detail: str = ""):
        self.n = n
        self.which = which
        super().__init__(f"step {n}: bound {which} violated {detail}".strip())


class InfeasibleAt(AssertionError):
    def __init__(self, n: int, constraint: str):
        self.n = n
        self.constraint = constraint
        super().__init__(f"step {n}: constraint {constraint} violated")


def _ratio(a, b):
    if isinstance(a, float) or isinstance(b, float):
        return a / b
    return Fraction(a) / Fraction(b)


@dataclass(frozen=True)
class AlphaReport:
    alpha: Fraction | float | None
    binding_index: int | None
    per_step_ratios: tuple
    valid: bool
    reason: str = ""


def alpha_from_sequences(values: Sequence, costs: Sequence) -> AlphaReport:
    """Largest alpha for the relaxed Lyapunov inequality along one sequence pair."""
    if len(values) < 2 or len(values) != len(costs):
        raise TraceTooShort("need at least two aligned steps")
    ratios = []
    reason = ""
    for n in range(len(values) - 1):
        drop = values[n] - values[n + 1]
        if costs[n] == 0:
            ratios.append(None)
            if drop < 0 and not reason:
                reason = f"value increases at zero-cost step {n}"
            continue
        r = _ratio(drop, costs[n])
        ratios.append(r)
        if r <= 0 and not reason:
            reason = f"nonpositive ratio {r} at step {n}"
    if reason:
        return AlphaReport(None, None, tuple(ratios), False, reason)
    scored = [(r, n) for n, r in enumerate(ratios) if r is not None]
    if not scored:
        return AlphaReport(Fraction(1), None, tuple(ratios), True)
    best, index = min(scored, key=lambda t: (t[0], t[1]))
    return AlphaReport(min(best, 1), index, tuple(ratios), True)


def local_alpha(trace: RunTrace, p: int) -> AlphaReport:
    if len(trace.steps) < 2:
        raise TraceTooShort(f"trace has {len(trace.steps)} steps")
    return alpha_from_sequences(trace.values(p), trace.stage_costs(p))


def _check_monotone(gamma: Callable, dim: int, grid=(0, 1, 2, 5)) -> None:
    zero = gamma((0,) * dim)
    if zero != 0:
        raise NonmonotoneWeights(f"weighting does not vanish at zero (got {zero})")
    for i in range(dim):
        for base in grid:
            lo = [base] * dim
            hi = list(lo)
            hi[i] = base + 1
            if not gamma(tuple(hi)) > gamma(tuple(lo)):
                raise NonmonotoneWeights(f"weighting not strictly increasing in component {i}")


def weighted_alpha(trace: RunTrace, weights) -> AlphaReport:
    """Alpha of the aggregated sequences gamma(V(n)) and gamma(l(n)).

    `weights` is either a per-agent mapping/sequence of positive numbers
    (linear weighting) or a callable taking the per-agent vector in agent-id
    order (componentwise increasing, zero at zero).
    """
    if len(trace.steps) < 2:
        raise TraceTooShort(f"trace has {len(trace.steps)} steps")
    agents = trace.agents
    if callable(weights):
        gamma = weights
        _check_monotone(gamma, len(agents))
    else:
        if isinstance(weights, Mapping):
            w = [weights[p] for p in agents]
        else:
            w = list(weights)
        if len(w) != len(agents):
            raise NonmonotoneWeights(f"{len(w)} weights for {len(agents)} agents")
        if any(x <= 0 for x in w):
            raise NonmonotoneWeights("linear weights must be strictly positive")

        def gamma(v):
            return sum(a * b for a, b in zip(w, v))

    values = [gamma(tuple(s.values[p] for p in agents)) for s in trace.steps]
    costs = [gamma(tuple(s.stage_costs[p] for p in agents)) for s in trace.steps]
    return alpha_from_sequences(values, costs)


def aggregated(trace: RunTrace, weights=None) -> tuple[list, list]:
    agents = trace.agents
    w = weights or {p: 1 for p in agents}
    v = [sum(w[p] * s.values[p] for p in agents) for s in trace.steps]
    c = [sum(w[p] * s.stage_costs[p] for p in agents) for s in trace.steps]
    return v, c


def info_at(trace: RunTrace, p: int, n: int) -> InfoSet:
    """The information agent p held for its final solve at step n."""
    return InfoSet.of(p, trace.steps[n].info.get(p, ()))


@dataclass(frozen=True)
class ChainReport:
    alpha: object
    v_inf: object
    j_inf: object
    v_n: object
    holds: bool = True


def suboptimality_check(
    trace: RunTrace, p: int, alpha, scenario: Scenario, *, n: int = 0, cutoff: int = 12
) -> ChainReport:
    """Check alpha*V_inf <= alpha*J_inf <= V_N(x(n)) <= V_inf at step n.

    J_inf sums the closed-loop stage costs from step n; V_inf is computed
    by horizon continuation against the information agent p used at step n.
    """
    costs = trace.stage_costs(p)[n:]
    if not costs or costs[-1] != 0 or trace.values(p)[-1] != 0:
        raise ClosedLoopNotConverged(f"agent {p} does not reach a zero-cost equilibrium within the trace")
    j_inf = sum(costs)
    v_n = trace.values(p)[n]
    info = info_at(trace, p, n)
    model = scenario.models[p]
    v_inf, _ = approx_infinite_value(
        model, trace.steps[n].states[p], info, cutoff, scenario.couplings, n=n
    )
    for which, lhs, rhs in (
        ("alpha*V_inf <= alpha*J_inf", alpha * v_inf, alpha * j_inf),
        ("alpha*J_inf <= V_N", alpha * j_inf, v_n),
        ("V_N <= V_inf", v_n, v_inf),
    ):
        if lhs > rhs:
            raise ChainViolated(which, lhs, rhs)
    return ChainReport(alpha, v_inf, j_inf, v_n)


@dataclass(frozen=True)
class MonotoneBound:
    """Comparison function of the distance to the reference.

    With ``squared_arg`` the function receives the squared distance, which
    keeps grid-world checks exact.
    """

    name: str
    fn: Callable
    squared_arg: bool = False
    grid: tuple = field(default=(0, 1, 2, 3, 5, 8, 13, 21))

    def __post_init__(self):
        samples = [self.fn(r * r if self.squared_arg else r) for r in self.grid]
        if samples[0] != 0:
            raise ValueError(f"{self.name}: value at zero must be zero")
        if any(b <= a for a, b in zip(samples, samples[1:])):
            raise ValueError(f"{self.name}: not strictly increasing on the sample grid")

    def at(self, dist_sq):
        return self.fn(dist_sq if self.squared_arg else math.sqrt(dist_sq))


def bridge_bounds(horizon: int) -> tuple[MonotoneBound, MonotoneBound, MonotoneBound]:
    """Shipped comparison functions for the bridge world."""
    return (
        MonotoneBound("alpha1", lambda s: s, squared_arg=True),
        MonotoneBound("alpha2", lambda s: 2 * horizon * s, squared_arg=True),
        MonotoneBound("alpha3", lambda s: s, squared_arg=True),
    )


def bounds_check(
    trace: RunTrace,
    p: int,
    alpha1: MonotoneBound,
    alpha2: MonotoneBound,
    alpha3: MonotoneBound,
    reference,
    dist_sq: Callable = bridge_cost,
    atol: float = 1e-9,
) -> int:
    """Check alpha1(r) <= V <= alpha2(r) and l >= alpha3(r) at every visited state.

    Returns the number of checked steps.
    """
    tol = 0 if all(b.squared_arg for b in (alpha1, alpha2, alpha3)) else atol
    for step in trace.steps:
        d2 = dist_sq(step.states[p], reference)
        v, c = step.values[p], step.stage_costs[p]
        if alpha1.at(d2) > v + tol:
            raise BoundViolated(step.n, alpha1.name, f"{alpha1.at(d2)} > V={v}")
        if v > alpha2.at(d2) + tol:
            raise BoundViolated(step.n, alpha2.name, f"V={v} > {alpha2.at(d2)}")
        if alpha3.at(d2) > c + tol:
            raise BoundViolated(step.n, alpha3.name, f"{alpha3.at(d2)} > l={c}")
    return len(trace.steps)


def feasibility_check(trace: RunTrace, scenario: Scenario) -> int:
    """Every joint state and applied transition satisfies all constraints.

    Returns the number of joint states checked.
    """
    joint = trace.joint_states()
    ids = scenario.ids
    for n, states in enumerate(joint):
        for p in ids:
            if not scenario.models[p].local_state_ok(states[p]):
                raise InfeasibleAt(n, f"local:{p}")
        # every agent's actual trajectory segment as a one-step record
        nxt = joint[n + 1] if n + 1 < len(joint) else None
        for p in ids:
            seq = (states[p],) if nxt is None else (states[p], nxt[p])
            others = [
                NeighborRecord(q, n, len(seq) - 1, (states[q],) if nxt is None else (states[q], nxt[q]))
                for q in ids
                if q != p
            ]
            found = coupling_violations(p, seq, n, InfoSet.of(p, others), scenario.couplings)
            if found:
                raise InfeasibleAt(n + found[0].k, found[0].constraint)
    return len(joint)


FLATTENED = "FLATTENED"
PERSISTENT = "PERSISTENT"
MIXED = "MIXED"


@dataclass(frozen=True)
class CouplingReport:
    status: str
    coupled_steps: tuple  # steps in the tail with a lower-level agent still constrained one step ahead
    tail: tuple


def persistent_coupling_detector(trace: RunTrace, nbar: int) -> CouplingReport:
    tail = tuple(s.n for s in trace.steps if s.n > nbar)
    if not tail:
        raise TraceTooShort(f"no steps after {nbar}")
    coupled = []
    for s in trace.steps:
        if s.n <= nbar:
            continue
        lower = [p for level in s.hierarchy_after[1:] for p in level]
        window = any(
            any(s.n + 1 <= r.solved_at + r.horizon for r in s.info.get(p, ()))
            for p in lower
        )
        if window:
            coupled.append(s.n)
    if len(coupled) == len(tail):
        status = PERSISTENT
    elif not coupled:
        status = FLATTENED
    else:
        status = MIXED
    return CouplingReport(status, tuple(coupled), tail)
