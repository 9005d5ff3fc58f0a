"""Cars on a one-lane bridge: grid dynamics, bridge and coupling constraints."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from .core import STATE, TRANSITION, AgentModel, JointConstraint

ORTHOGONAL = "orthogonal"
KING = "king"
SWAP_ONLY = "swap_only"
STRICT = "strict"

BRIDGE_COLUMN = 0


class UnknownScenario(ValueError):
    pass


def move_set(mode: str = ORTHOGONAL) -> tuple:
    """Controls in tie-break order: standing still first, then lexicographic on (dx, dy).

    The last control of a plan carries no cost, so without the neutral-first
    rule a resting agent would predict a pointless final move.
    """
    if mode == ORTHOGONAL:
        moves = [(dx, dy) for dx, dy in itertools.product((-1, 0, 1), repeat=2) if abs(dx) + abs(dy) <= 1]
    elif mode == KING:
        moves = list(itertools.product((-1, 0, 1), repeat=2))
    else:
        raise ValueError(f"unknown move mode {mode!r}")
    return tuple(sorted(moves, key=lambda u: (u != (0, 0), u)))


def bridge_dynamics(x, u):
    return (x[0] + u[0], x[1] + u[1])


def collision_ok(xa, xb) -> bool:
    return xa != xb


def bridge_ok(x) -> bool:
    return x[0] != BRIDGE_COLUMN or x[1] == 0


def swap_ok(xa, ua, xb, ub, rule: str = SWAP_ONLY) -> bool:
    a_hits_b = bridge_dynamics(xa, ua) == xb
    b_hits_a = bridge_dynamics(xb, ub) == xa
    if rule == SWAP_ONLY:
        return not (a_hits_b and b_hits_a)
    if rule == STRICT:
        return not (a_hits_b or b_hits_a)
    raise ValueError(f"unknown swap rule {rule!r}")


def bridge_cost(x, ref):
    return (x[0] - ref[0]) ** 2 + (x[1] - ref[1]) ** 2


def chebyshev(x, ref) -> int:
    return max(abs(x[0] - ref[0]), abs(x[1] - ref[1]))


def distance_lower_bound(x, ref, steps: int) -> int:
    """Lower bound on the summed squared distance over `steps` stages.

    Every move changes the Chebyshev distance by at most one and the
    squared Euclidean distance dominates the squared Chebyshev distance.
    """
    d = chebyshev(x, ref)
    return sum(max(0, d - k) ** 2 for k in range(steps))


def _collision(a: int, b: int) -> JointConstraint:
    return JointConstraint(
        f"collision:{a}-{b}", frozenset((a, b)), STATE, lambda s: collision_ok(s[a], s[b])
    )


def _swap(a: int, b: int, rule: str) -> JointConstraint:
    def check(s):
        (xa, xa1), (xb, xb1) = s[a], s[b]
        ua = (xa1[0] - xa[0], xa1[1] - xa[1])
        ub = (xb1[0] - xb[0], xb1[1] - xb[1])
        return swap_ok(xa, ua, xb, ub, rule)

    return JointConstraint(f"swap:{a}-{b}", frozenset((a, b)), TRANSITION, check)


def pairwise_couplings(ids, swap_rule: str = SWAP_ONLY) -> tuple:
    ids = sorted(ids)
    out = []
    for a, b in itertools.combinations(ids, 2):
        out.append(_collision(a, b))
        out.append(_swap(a, b, swap_rule))
    return tuple(out)


@dataclass(frozen=True)
class GridWorld:
    bridge: bool = True
    corridor: bool = False
    bounds: tuple | None = None  # ((xmin, xmax), (ymin, ymax))

    def state_ok(self, x) -> bool:
        if self.bridge and not bridge_ok(x):
            return False
        if self.corridor and x[1] != 0:
            return False
        if self.bounds is not None:
            (x0, x1), (y0, y1) = self.bounds
            if not (x0 <= x[0] <= x1 and y0 <= x[1] <= y1):
                return False
        return True


def make_agent(
    agent_id: int,
    reference,
    horizon: int,
    world: GridWorld = GridWorld(),
    moves: str = ORTHOGONAL,
    cost_weight=0,
) -> AgentModel:
    ref = tuple(reference)
    weight = Fraction(cost_weight) if isinstance(cost_weight, str) else cost_weight

    def cost(x, u):
        c = bridge_cost(x, ref)
        if weight:
            c = c + weight * (u[0] ** 2 + u[1] ** 2)
        return c

    return AgentModel(
        id=agent_id,
        step=bridge_dynamics,
        controls=move_set(moves),
        local_state_ok=world.state_ok,
        stage_cost=cost,
        reference=ref,
        horizon=horizon,
        neutral=(0, 0),
        cost_lower_bound=lambda x, steps: distance_lower_bound(x, ref, steps),
    )


@dataclass(frozen=True)
class Scenario:
    name: str
    models: Mapping[int, AgentModel]
    couplings: tuple
    initial_states: Mapping[int, tuple]
    world: GridWorld = field(default_factory=GridWorld)

    @property
    def ids(self) -> list[int]:
        return sorted(self.models)

    def with_horizon(self, horizon: int) -> Scenario:
        models = {p: m.with_horizon(horizon) for p, m in self.models.items()}
        return Scenario(self.name, models, self.couplings, self.initial_states, self.world)


BRIDGE_AGENTS = (
    {"id": 1, "start": (1, 0), "reference": (-2, 0)},
    {"id": 2, "start": (-1, 0), "reference": (2, 0)},
)
DEFAULT_HORIZON = 6


def build_scenario(
    name: str = "bridge_default",
    agents=None,
    *,
    horizon: int = DEFAULT_HORIZON,
    moves: str = ORTHOGONAL,
    swap_rule: str = SWAP_ONLY,
    cost_weight=0,
    grid: Mapping | None = None,
) -> Scenario:
    """Build a named scenario.

    `agents` entries are mappings with ``id``, ``start``, ``reference`` and
    optional ``horizon``; named worlds fall back to the two bridge cars.
    """
    if name == "bridge_default":
        world = GridWorld(bridge=True)
    elif name == "corridor_deadlock":
        world = GridWorld(bridge=True, corridor=True)
    elif name == "custom":
        if agents is None:
            raise ValueError("custom scenario needs an agent list")
        grid = dict(grid or {})
        bounds = grid.get("bounds")
        world = GridWorld(
            bridge=bool(grid.get("bridge", True)),
            corridor=bool(grid.get("corridor", False)),
            bounds=tuple(tuple(b) for b in bounds) if bounds else None,
        )
    else:
        raise UnknownScenario(name)
    if agents is None:
        agents = BRIDGE_AGENTS
    models = {}
    starts = {}
    for spec in agents:
        p = int(spec["id"])
        if p in models:
            raise ValueError(f"duplicate agent id {p}")
        n_p = spec.get("horizon")
        n_p = horizon if n_p is None else int(n_p)
        models[p] = make_agent(p, spec["reference"], n_p, world, moves, cost_weight)
        starts[p] = tuple(spec["start"])
    return Scenario(name, models, pairwise_couplings(models, swap_rule), starts, world)
