"""Closed-loop driver with a lossy, delayed cross-step information channel.

Messages inside one time step (the scheduler's broadcasts) are always
delivered. The network model only decides which final plans of step n
reach other agents' stores for use at later steps.
"""

from __future__ import annotations

import random
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .bridge import Scenario
from .core import NeighborRecord
from .scheduler import Rules, initial_hierarchy, level_map, scheduler_step
from .solver import EmptyAdmissibleSet, solve_ocp


@dataclass(frozen=True)
class NetworkModel:
    """Cross-step communication.

    `adjacency` maps a time to the set of directed (source, recipient)
    edges, None meaning the complete graph. `edge_loss`/`edge_delay`
    override the global values per edge.
    """

    loss: float = 0.0
    delay: int = 0
    seed: int = 0
    adjacency: Callable[[int], set] | None = None
    edge_loss: Mapping[tuple, float] = field(default_factory=dict)
    edge_delay: Mapping[tuple, int] = field(default_factory=dict)

    def __post_init__(self):
        for p in [self.loss, *self.edge_loss.values()]:
            if not 0 <= p <= 1:
                raise ValueError(f"loss probability {p} outside [0, 1]")
        for d in [self.delay, *self.edge_delay.values()]:
            if d < 0:
                raise ValueError(f"negative delay {d}")

    def edges(self, n: int):
        return None if self.adjacency is None else self.adjacency(n)

    def loss_for(self, edge) -> float:
        return self.edge_loss.get(edge, self.loss)

    def delay_for(self, edge) -> int:
        return self.edge_delay.get(edge, self.delay)


IDEAL = NetworkModel()


def schedule_adjacency(entries: Iterable[tuple[int, Iterable]]) -> Callable[[int], set]:
    """Piecewise-constant graph: each (from_step, edges) holds until the next entry."""
    table = sorted((int(start), frozenset(tuple(e) for e in edges)) for start, edges in entries)

    def at(n: int):
        current = frozenset()
        for start, edges in table:
            if start <= n:
                current = edges
        return current

    return at


@dataclass(frozen=True)
class Delivery:
    delivered: list
    delayed: list  # (due_step, message)
    dropped: list


def _lost(network: NetworkModel, n: int, source: int, recipient: int) -> bool:
    p = network.loss_for((source, recipient))
    if p <= 0:
        return False
    if p >= 1:
        return True
    return random.Random(f"{network.seed}:{n}:{source}:{recipient}").random() < p


def network_apply(messages: Iterable[tuple], network: NetworkModel, n: int) -> Delivery:
    """Route (source, recipient, record) messages emitted at the end of step n.

    A delay of d steps makes the record usable from step max(n + 1, n + d)
    on; its solved_at is never rewritten.
    """
    edges = network.edges(n)
    delivered, delayed, dropped = [], [], []
    for msg in sorted(messages, key=lambda m: (m[1], m[0])):
        source, recipient, _ = msg
        if edges is not None and (source, recipient) not in edges:
            dropped.append(msg)
        elif _lost(network, n, source, recipient):
            dropped.append(msg)
        elif network.delay_for((source, recipient)) > 1:
            delayed.append((n + network.delay_for((source, recipient)), msg))
        else:
            delivered.append(msg)
    return Delivery(delivered, delayed, dropped)


class InfoStore:
    """Latest record per (recipient, source) plus records still in flight."""

    def __init__(self):
        self._latest: dict[tuple[int, int], NeighborRecord] = {}
        self._in_flight: list[tuple[int, tuple]] = []

    def put(self, recipient: int, record: NeighborRecord) -> bool:
        if recipient == record.source:
            return False
        key = (recipient, record.source)
        old = self._latest.get(key)
        if old is not None and old.solved_at >= record.solved_at:
            return False
        self._latest[key] = record
        return True

    def get(self, recipient: int, source: int) -> NeighborRecord | None:
        return self._latest.get((recipient, source))

    def accept(self, delivery: Delivery) -> None:
        for _, recipient, record in delivery.delivered:
            self.put(recipient, record)
        self._in_flight.extend(delivery.delayed)

    def release(self, step: int) -> None:
        """Move in-flight records due at or before `step` into the store."""
        due = sorted((m for m in self._in_flight if m[0] <= step), key=lambda m: (m[0], m[1][1], m[1][0]))
        self._in_flight = [m for m in self._in_flight if m[0] > step]
        for _, (_, recipient, record) in due:
            self.put(recipient, record)


@dataclass
class StepRecord:
    n: int
    states: dict
    controls: dict
    values: dict
    stage_costs: dict
    levels: dict
    memory: dict
    demotions: list
    hierarchy_before: tuple
    hierarchy_after: tuple
    plans: dict
    info: dict


@dataclass
class RunTrace:
    config: dict
    steps: list = field(default_factory=list)
    final_states: dict = field(default_factory=dict)

    @property
    def agents(self) -> list[int]:
        if self.steps:
            return sorted(self.steps[0].states)
        return sorted(self.final_states)

    def values(self, p: int) -> list:
        return [s.values[p] for s in self.steps]

    def stage_costs(self, p: int) -> list:
        return [s.stage_costs[p] for s in self.steps]

    def joint_states(self) -> list[dict]:
        return [s.states for s in self.steps] + ([self.final_states] if self.final_states else [])


def run_closed_loop(
    scenario: Scenario,
    rules: Rules = Rules(),
    network: NetworkModel = IDEAL,
    T: int = 8,
    *,
    executor: Executor | None = None,
    solver: Callable = solve_ocp,
    config: Mapping | None = None,
) -> RunTrace:
    if T < 1:
        raise ValueError("T must be at least 1")
    models = scenario.models
    states = dict(scenario.initial_states)
    hierarchy = initial_hierarchy(models)
    memory = {p: () for p in models}
    store = InfoStore()
    trace = RunTrace(dict(config or {"scenario": scenario.name}))
    for n in range(T):
        store.release(n)
        try:
            out = scheduler_step(
                models, scenario.couplings, states, n, hierarchy, memory, rules,
                store=store.get, executor=executor, solver=solver,
            )
        except EmptyAdmissibleSet as exc:
            exc.step = n
            raise
        trace.steps.append(
            StepRecord(
                n=n,
                states=dict(states),
                controls=dict(out.applied),
                values={p: out.plans[p].value for p in out.plans},
                stage_costs={p: models[p].stage_cost(states[p], out.applied[p]) for p in out.plans},
                levels=level_map(out.hierarchy_after),
                memory={p: tuple(out.memory[p]) for p in out.memory},
                demotions=[(d.agent, d.from_level, d.inducers) for d in out.demotions],
                hierarchy_before=out.hierarchy_before,
                hierarchy_after=out.hierarchy_after,
                plans=dict(out.plans),
                info={p: tuple(r for _, r in sorted(info.records.items())) for p, info in out.infos.items()},
            )
        )
        messages = [
            (p, q, out.plans[p].record()) for p in out.plans for q in models if q != p
        ]
        store.accept(network_apply(messages, network, n))
        states = {p: models[p].step(states[p], out.applied[p]) for p in sorted(models)}
        hierarchy, memory = out.hierarchy_after, out.memory
    trace.final_states = states
    return trace
