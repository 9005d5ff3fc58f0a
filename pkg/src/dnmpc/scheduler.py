"""Priority hierarchy with decision memory (the covering algorithm).

One time step runs: deorder_pass -> initial_solve -> priority_pass, then
the first control of every final plan is applied. Agents on one level
solve independently (optionally on an executor); levels commit in order.

Hierarchies are tuples of tuples of agent ids, index 0 being the top
level. Memory maps agent -> tuple of (neighbour, acquired_at).
"""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .core import AgentModel, InfoSet, JointConstraint, coupling_violations
from .solver import Plan, solve_ocp

Hierarchy = tuple
Memory = dict


class RuleContractViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class PriorityRule:
    name: str
    order: Callable[[Sequence[int], Mapping[int, Plan]], Sequence[int]]

    def __call__(self, members: Sequence[int], plans: Mapping[int, Plan] | None = None) -> tuple:
        out = tuple(self.order(tuple(members), plans or {}))
        if sorted(out) != sorted(members):
            raise RuleContractViolation(f"priority rule {self.name!r} returned {out}, not a permutation of {tuple(members)}")
        return out


@dataclass(frozen=True)
class DeorderingRule:
    name: str
    reduce: Callable[[tuple], tuple]
    # False only for the rule that never forgets, which skips the memory reduction
    strict: bool = True

    def __call__(self, entries: tuple) -> tuple:
        out = tuple(self.reduce(tuple(entries)))
        if not self.strict:
            return tuple(entries)
        if not set(out) < set(entries):
            raise RuleContractViolation(f"deordering rule {self.name!r} must return a strict subset, got {out}")
        return out


def _cost_greedy(members, plans):
    # agents with the most to lose go first; ties by id
    return sorted(members, key=lambda p: (-plans[p].value if p in plans else 0, p))


LEXICOGRAPHIC = PriorityRule("lexicographic", lambda members, plans: sorted(members))
IDENTITY = PriorityRule("identity", lambda members, plans: members)
COST_GREEDY = PriorityRule("cost_greedy", _cost_greedy)

DROP_ALL = DeorderingRule("drop_all", lambda entries: ())
# stable sort: among equal acquisition times the first listed is the oldest
DROP_OLDEST = DeorderingRule("drop_oldest", lambda entries: tuple(sorted(entries, key=lambda e: e[1])[1:]))
NEVER = DeorderingRule("never", lambda entries: entries, strict=False)

PRIORITY_RULES = {r.name: r for r in (LEXICOGRAPHIC, IDENTITY, COST_GREEDY)}
DEORDERING_RULES = {r.name: r for r in (DROP_ALL, DROP_OLDEST, NEVER)}


@dataclass(frozen=True)
class Rules:
    priority: PriorityRule = LEXICOGRAPHIC
    deorder: DeorderingRule = DROP_ALL

    @classmethod
    def named(cls, priority: str = "lexicographic", deorder: str = "drop_all") -> Rules:
        try:
            return cls(PRIORITY_RULES[priority], DEORDERING_RULES[deorder])
        except KeyError as exc:
            raise ValueError(f"unknown rule {exc.args[0]!r}") from None


@dataclass(frozen=True)
class Demotion:
    agent: int
    from_level: int  # 1-based
    inducers: tuple


@dataclass(frozen=True)
class Message:
    source: int
    recipient: int
    solved_at: int
    phase: str


@dataclass
class StepOutcome:
    n: int
    applied: dict
    plans: dict
    infos: dict
    hierarchy_before: Hierarchy
    hierarchy_after: Hierarchy
    memory: dict
    demotions: list = field(default_factory=list)
    messages: list = field(default_factory=list)

    def level_of(self, p: int) -> int:
        return level_map(self.hierarchy_after)[p]


def initial_hierarchy(ids: Iterable[int]) -> Hierarchy:
    return (tuple(sorted(ids)),)


def level_map(hierarchy: Hierarchy) -> dict[int, int]:
    """Agent -> 1-based level."""
    return {p: i + 1 for i, level in enumerate(hierarchy) for p in level}


def compact(levels: Iterable[Iterable[int]]) -> Hierarchy:
    out = tuple(tuple(level) for level in levels if level)
    return out or ((),)


def deorder_pass(hierarchy: Hierarchy, memory: Mapping[int, tuple], theta: DeorderingRule):
    """Apply the deordering rule to every agent below the top level.

    Agents whose memory empties join the top level. Others move up to the
    level just below their best-placed remembered neighbour when that is
    above them, so only agents with empty memory ever sit on the top level.
    """
    levels = [list(level) for level in hierarchy]
    memory = {p: tuple(m) for p, m in memory.items()}
    for i in range(1, len(levels)):
        for p in list(levels[i]):
            entries = memory.get(p, ())
            if entries:
                entries = theta(entries)
            memory[p] = entries
            if not entries:
                levels[i].remove(p)
                levels[0].append(p)
                continue
            remembered = {q for q, _ in entries}
            target = min((m for m, level in enumerate(levels) if remembered & set(level)), default=None)
            if target is not None and target + 1 < i:
                levels[i].remove(p)
                levels[target + 1].append(p)
    return compact(levels), memory


def detect_violations(plan: Plan, earlier: Iterable[Plan], couplings: Iterable[JointConstraint], n: int) -> set[int]:
    """Earlier agents whose coupling constraints `plan` violates (local constraints are ignored)."""
    earlier = [e for e in earlier if e.owner != plan.owner]
    if not earlier:
        return set()
    info = InfoSet.of(plan.owner, [e.record() for e in earlier])
    found = coupling_violations(plan.owner, plan.states, n, info, couplings)
    return {q for v in found for q in v.inducers}


@dataclass
class StepContext:
    models: Mapping[int, AgentModel]
    couplings: tuple
    states: Mapping[int, object]
    n: int
    store: Callable[[int, int], object] = lambda recipient, source: None
    executor: Executor | None = None
    solver: Callable = solve_ocp
    inbox: dict = field(default_factory=dict)
    messages: list = field(default_factory=list)
    infos: dict = field(default_factory=dict)

    def info_for(self, p: int, memory: Mapping[int, tuple]) -> InfoSet:
        records = []
        for q, _ in memory.get(p, ()):
            rec = self.inbox.get(p, {}).get(q) or self.store(p, q)
            if rec is not None and rec.solved_at <= self.n:
                records.append(rec)
        return InfoSet.of(p, records)

    def solve_many(self, agents: Sequence[int], infos: Mapping[int, InfoSet]) -> dict[int, Plan]:
        def one(p):
            return self.solver(self.models[p], self.states[p], self.n, infos[p], self.couplings)

        agents = list(agents)
        if self.executor is not None and len(agents) > 1:
            results = list(self.executor.map(one, agents))
        else:
            results = [one(p) for p in agents]
        for p in agents:
            self.infos[p] = infos[p]
        return dict(zip(agents, results))

    def broadcast(self, plan: Plan, hierarchy: Hierarchy, from_level: int, phase: str) -> None:
        """Deliver `plan` to every agent on level `from_level` (0-based) or below."""
        rec = plan.record()
        for level in hierarchy[from_level:]:
            for q in level:
                if q != plan.owner:
                    self.inbox.setdefault(q, {})[plan.owner] = rec
                    self.messages.append(Message(plan.owner, q, plan.solved_at, phase))


def initial_solve(ctx: StepContext, hierarchy: Hierarchy, memory: Mapping[int, tuple]) -> dict[int, Plan]:
    """Every agent solves from its measured state against remembered neighbours only."""
    agents = [p for level in hierarchy for p in level]
    infos = {p: ctx.info_for(p, memory) for p in agents}
    plans = ctx.solve_many(sorted(agents), infos)
    for i, level in enumerate(hierarchy):
        for p in level:
            ctx.broadcast(plans[p], hierarchy, i, "initial")
    return plans


def priority_pass(ctx: StepContext, hierarchy: Hierarchy, plans: Mapping[int, Plan], pi: PriorityRule, memory):
    """Sort each level, demote agents conflicting with earlier members, re-solve the next level."""
    levels = [list(level) for level in hierarchy]
    plans = dict(plans)
    memory = {p: tuple(m) for p, m in memory.items()}
    demotions = []
    i = 0
    while i < len(levels):
        if not levels[i] and not any(levels[i + 1:]):
            break
        if i + 1 == len(levels):
            levels.append([])
        if len(levels[i]) >= 2:
            levels[i] = list(pi(levels[i], plans))
            kept = [levels[i][0]]
            for p in levels[i][1:]:
                inducers = detect_violations(plans[p], [plans[q] for q in kept], ctx.couplings, ctx.n)
                if inducers:
                    levels[i + 1].append(p)
                    known = {q for q, _ in memory.get(p, ())}
                    added = tuple((q, ctx.n) for q in sorted(inducers) if q not in known)
                    memory[p] = memory.get(p, ()) + added
                    demotions.append(Demotion(p, i + 1, tuple(sorted(inducers))))
                else:
                    kept.append(p)
            levels[i] = kept
        if levels[i + 1]:
            _resolve_level(ctx, levels, i, plans, memory)
        i += 1
    final = compact(levels)
    return final, plans, memory, demotions


def _resolve_level(ctx: StepContext, levels, i: int, plans: dict, memory: dict) -> None:
    """Re-solve level i+1 against committed plans and broadcast to levels >= i.

    A re-solved plan that still breaks a coupling with a committed agent
    outside its memory adds that agent to memory and solves again.
    """
    pending = list(levels[i + 1])
    committed = [plans[q] for level in levels[: i + 1] for q in level]
    snapshot = tuple(tuple(level) for level in levels)
    while pending:
        infos = {p: ctx.info_for(p, memory) for p in pending}
        solved = ctx.solve_many(pending, infos)
        plans.update(solved)
        retry = []
        for p in pending:
            missed = detect_violations(solved[p], committed, ctx.couplings, ctx.n)
            known = {q for q, _ in memory.get(p, ())}
            missed -= known
            if missed:
                memory[p] = memory.get(p, ()) + tuple((q, ctx.n) for q in sorted(missed))
                retry.append(p)
        pending = retry
    for p in levels[i + 1]:
        ctx.broadcast(plans[p], snapshot, i, "resolve")


def scheduler_step(
    models: Mapping[int, AgentModel],
    couplings: Iterable[JointConstraint],
    states: Mapping[int, object],
    n: int,
    hierarchy: Hierarchy,
    memory: Mapping[int, tuple],
    rules: Rules = Rules(),
    *,
    store: Callable[[int, int], object] | None = None,
    executor: Executor | None = None,
    solver: Callable = solve_ocp,
) -> StepOutcome:
    ctx = StepContext(models, tuple(couplings), states, n, executor=executor, solver=solver)
    if store is not None:
        ctx.store = store
    memory = {p: tuple(memory.get(p, ())) for p in models}
    before = hierarchy
    hierarchy, memory = deorder_pass(hierarchy, memory, rules.deorder)
    plans = initial_solve(ctx, hierarchy, memory)
    hierarchy, plans, memory, demotions = priority_pass(ctx, hierarchy, plans, rules.priority, memory)
    applied = {p: plans[p].first_control for p in sorted(plans)}
    return StepOutcome(
        n=n,
        applied=applied,
        plans={p: plans[p] for p in sorted(plans)},
        infos={p: ctx.infos[p] for p in sorted(ctx.infos)},
        hierarchy_before=before,
        hierarchy_after=hierarchy,
        memory={p: memory[p] for p in sorted(memory)},
        demotions=demotions,
        messages=ctx.messages,
    )
