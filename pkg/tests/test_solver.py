import dataclasses
import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnmpc.bridge import KING, build_scenario, make_agent
from dnmpc.core import AgentModel, InfoSet, NeighborRecord, rollout
from dnmpc.solver import (
    BudgetExceeded,
    EmptyAdmissibleSet,
    NotConverged,
    approx_infinite_value,
    enumerate_oracle,
    solve_ocp,
)

BRIDGE = build_scenario()
COUPLINGS = BRIDGE.couplings


def agent1_plan(horizon=6):
    return solve_ocp(BRIDGE.models[1].with_horizon(horizon), (1, 0), 0, InfoSet(1), COUPLINGS)


def test_agent2_value_against_agent1_plan():
    info = InfoSet.of(2, [agent1_plan().record()])
    plan = solve_ocp(BRIDGE.models[2].with_horizon(4), (-1, 0), 0, info, COUPLINGS)
    assert plan.value == 37
    assert plan.first_control == (0, 0)


def test_oracle_agent2_short_horizon():
    info = InfoSet.of(2, [agent1_plan(2).record()])
    assert enumerate_oracle(BRIDGE.models[2].with_horizon(2), (-1, 0), 0, info, COUPLINGS).value == 18


def test_at_reference_plan_is_neutral():
    plan = solve_ocp(BRIDGE.models[2], (2, 0), 0, InfoSet(2), COUPLINGS)
    assert plan.value == 0
    assert plan.controls == ((0, 0),) * 6


def test_single_control_model():
    model = AgentModel(7, lambda x, u: x + u, (0,), lambda x: True, lambda x, u: x * x, 0, 3, 0)
    plan = enumerate_oracle(model, 2, 0, InfoSet(7))
    assert plan.controls == (0, 0, 0) and plan.value == 12
    assert solve_ocp(model, 2, 0, InfoSet(7)) == plan


def test_zero_horizon_rejected():
    with pytest.raises(ValueError):
        solve_ocp(BRIDGE.models[1].with_horizon(0), (1, 0), 0, InfoSet(1))
    with pytest.raises(ValueError):
        enumerate_oracle(BRIDGE.models[1].with_horizon(0), (1, 0), 0, InfoSet(1))


def test_oracle_budget_guard():
    model = make_agent(1, (0, 0), 8, moves=KING)
    with pytest.raises(BudgetExceeded):
        enumerate_oracle(model, (3, 3), 0, InfoSet(1))


def test_infeasible_start_and_empty_set():
    with pytest.raises(EmptyAdmissibleSet):
        solve_ocp(BRIDGE.models[2], (0, 1), 0, InfoSet(2), COUPLINGS)
    # on the corridor, staying collides with the oncoming neighbour and advancing swaps with it
    corridor = build_scenario("corridor_deadlock", horizon=1)
    boxed = InfoSet.of(2, [NeighborRecord(1, 0, 1, ((0, 0), (-1, 0)))])
    model = dataclasses.replace(corridor.models[2], controls=((0, 0), (1, 0)))
    with pytest.raises(EmptyAdmissibleSet):
        solve_ocp(model, (-1, 0), 0, boxed, corridor.couplings)
    with pytest.raises(EmptyAdmissibleSet):
        enumerate_oracle(model, (-1, 0), 0, boxed, corridor.couplings)


def test_infinite_value_examples():
    info = InfoSet.of(2, [agent1_plan().record()])
    assert approx_infinite_value(BRIDGE.models[2], (-1, 0), info, 10, COUPLINGS) == (42, True)
    assert approx_infinite_value(BRIDGE.models[2], (2, 0), InfoSet(2), 10, COUPLINGS) == (0, True)
    with pytest.raises(ValueError):
        approx_infinite_value(BRIDGE.models[2], (2, 0), InfoSet(2), 0)


def test_infinite_value_corridor_never_converges():
    corridor = build_scenario("corridor_deadlock")
    # agent 1 parked on the corridor between agent 2 and its reference
    parked = NeighborRecord(1, 0, 12, ((1, 0),) * 13)
    info = InfoSet.of(2, [parked])
    with pytest.raises(NotConverged):
        approx_infinite_value(corridor.models[2], (-1, 0), info, 8, corridor.couplings)
    value, converged = approx_infinite_value(corridor.models[2], (-1, 0), info, 8, corridor.couplings, strict=False)
    assert not converged and value > 0


cells = st.tuples(st.integers(-3, 3), st.integers(-2, 2)).filter(lambda x: x[0] != 0 or x[1] == 0)


@st.composite
def instances(draw, max_horizon=4):
    moves = draw(st.sampled_from(["orthogonal", "king"]))
    horizon = draw(st.integers(1, max_horizon if moves == "orthogonal" else 3))
    x1, x2 = draw(st.lists(cells, min_size=2, max_size=2, unique=True))
    ref = draw(cells)
    scenario = build_scenario(
        "custom",
        [{"id": 1, "start": x1, "reference": draw(cells)}, {"id": 2, "start": x2, "reference": ref}],
        horizon=horizon,
        moves=moves,
        swap_rule=draw(st.sampled_from(["swap_only", "strict"])),
    )
    neighbour_moves = draw(st.lists(st.sampled_from(scenario.models[1].controls), min_size=1, max_size=5))
    solved_at = draw(st.integers(0, 2))
    rec = NeighborRecord(1, solved_at, len(neighbour_moves), rollout(scenario.models[1], x1, neighbour_moves).states)
    n = solved_at + draw(st.integers(0, 2))
    info = InfoSet.of(2, [rec]) if draw(st.booleans()) else InfoSet(2)
    return scenario, x2, n, info


def solve_or_none(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except EmptyAdmissibleSet:
        return None


@settings(max_examples=100, deadline=None)
@given(instances())
def test_solver_matches_oracle(case):
    scenario, x0, n, info = case
    model = scenario.models[2]
    got = solve_or_none(solve_ocp, model, x0, n, info, scenario.couplings)
    want = solve_or_none(enumerate_oracle, model, x0, n, info, scenario.couplings)
    assert got == want


@settings(max_examples=60, deadline=None)
@given(instances())
def test_pruning_does_not_change_result(case):
    scenario, x0, n, info = case
    model = scenario.models[2]
    pruned = solve_or_none(solve_ocp, model, x0, n, info, scenario.couplings)
    plain = solve_or_none(solve_ocp, model, x0, n, info, scenario.couplings, prune=False)
    assert pruned == plain


@settings(max_examples=60, deadline=None)
@given(instances())
def test_more_information_never_lowers_value(case):
    scenario, x0, n, info = case
    model = scenario.models[2]
    with_info = solve_or_none(solve_ocp, model, x0, n, info, scenario.couplings)
    without = solve_or_none(solve_ocp, model, x0, n, InfoSet(2), scenario.couplings)
    if with_info is not None:
        assert without is not None and without.value <= with_info.value


@pytest.mark.parametrize("x0", [(-1, 0), (3, 2), (-2, -1), (0, 0)])
def test_value_grows_with_horizon(x0):
    info = InfoSet.of(2, [agent1_plan().record()])
    values = [solve_ocp(BRIDGE.models[2].with_horizon(N), x0, 0, info, COUPLINGS).value for N in range(1, 7)]
    assert all(a <= b for a, b in itertools.pairwise(values))


def test_repeat_solves_are_identical():
    info = InfoSet.of(2, [agent1_plan().record()])
    a = solve_ocp(BRIDGE.models[2], (-1, 0), 0, info, COUPLINGS)
    b = solve_ocp(BRIDGE.models[2], (-1, 0), 0, info, COUPLINGS)
    assert a == b and repr(a) == repr(b)


def test_float_costs_with_tolerance():
    model = AgentModel(
        1, lambda x, u: x + u, (-0.5, 0.0, 0.5), lambda x: True, lambda x, u: (x - 0.1) ** 2, 0.1, 3, 0.0
    )
    a = solve_ocp(model, 1.0, 0, InfoSet(1), atol=1e-9)
    b = enumerate_oracle(model, 1.0, 0, InfoSet(1), atol=1e-9)
    assert a.controls == b.controls
    assert a.value == pytest.approx(b.value, abs=1e-9)
