from concurrent.futures import ThreadPoolExecutor

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnmpc.bridge import build_scenario
from dnmpc.core import InfoSet
from dnmpc.scheduler import (
    COST_GREEDY,
    DROP_ALL,
    DROP_OLDEST,
    IDENTITY,
    LEXICOGRAPHIC,
    NEVER,
    DeorderingRule,
    PriorityRule,
    RuleContractViolation,
    Rules,
    StepContext,
    compact,
    deorder_pass,
    detect_violations,
    initial_hierarchy,
    initial_solve,
    level_map,
    priority_pass,
    scheduler_step,
)
from dnmpc.simulation import run_closed_loop
from dnmpc.solver import EmptyAdmissibleSet, Plan, solve_ocp

from strategies import rules, scenarios

BRIDGE4 = build_scenario(horizon=4)


def step0(scenario=BRIDGE4, rules=Rules(), **kw):
    return scheduler_step(
        scenario.models, scenario.couplings, scenario.initial_states, 0, initial_hierarchy(scenario.models), {}, rules, **kw
    )


# deordering


def test_drop_all_returns_agent_to_top():
    hierarchy, memory = deorder_pass(((1,), (2,)), {1: (), 2: ((1, 0),)}, DROP_ALL)
    assert hierarchy == ((1, 2),)
    assert memory[2] == ()


def test_deordering_must_shrink_memory():
    lazy = DeorderingRule("lazy", lambda entries: entries)
    with pytest.raises(RuleContractViolation):
        deorder_pass(((1,), (2,)), {2: ((1, 0),)}, lazy)
    grow = DeorderingRule("grow", lambda entries: entries + ((9, 0),))
    with pytest.raises(RuleContractViolation):
        grow(((1, 0),))


def test_never_skips_deordering():
    assert NEVER(((1, 0), (3, 2))) == ((1, 0), (3, 2))
    hierarchy, memory = deorder_pass(((1,), (2,)), {2: ((1, 0),)}, NEVER)
    # already directly below its remembered neighbour, so nothing moves
    assert hierarchy == ((1,), (2,)) and memory[2] == ((1, 0),)


def test_drop_oldest_chain():
    memory = {1: (), 2: ((1, 0), (3, 1)), 3: ((1, 0), (2, 1))}
    hierarchy, memory = deorder_pass(((1,), (2,), (3,)), memory, DROP_OLDEST)
    assert memory[3] == ((2, 1),)
    assert memory[2] == ((3, 1),)
    # agent 3 still depends on agent 2 and stays directly below it
    assert hierarchy == ((1,), (2,), (3,))


def test_drop_oldest_moves_agent_below_its_best_neighbour():
    memory = {1: (), 2: ((1, 0),), 3: ((2, 0),), 4: ((3, 0), (1, 1))}
    hierarchy, memory = deorder_pass(((1,), (2,), (3,), (4,)), memory, DROP_OLDEST)
    assert memory[4] == ((1, 1),)
    # agents 2 and 3 lose their only entry and join the top level
    assert hierarchy == ((1, 2, 3), (4,))


def test_drop_oldest_keeps_listing_order_on_ties():
    assert DROP_OLDEST(((4, 1), (2, 1), (3, 0))) == ((4, 1), (2, 1))
    assert DROP_OLDEST(((4, 1), (2, 1))) == ((2, 1),)


# priority rules


def test_priority_rules():
    plans = {p: Plan(p, 0, 1, ((0, 0),), ((0, 0), (0, 0)), v) for p, v in [(1, 5), (2, 9), (3, 9)]}
    assert LEXICOGRAPHIC((3, 1, 2)) == (1, 2, 3)
    assert IDENTITY((3, 1, 2)) == (3, 1, 2)
    assert COST_GREEDY((1, 3, 2), plans) == (2, 3, 1)
    broken = PriorityRule("broken", lambda members, plans: members[:-1])
    with pytest.raises(RuleContractViolation):
        broken((1, 2))


def test_named_rules():
    assert Rules.named("cost_greedy", "never") == Rules(COST_GREEDY, NEVER)
    with pytest.raises(ValueError):
        Rules.named("loudest")


def test_level_helpers():
    assert level_map(((2,), (1, 3))) == {2: 1, 1: 2, 3: 2}
    assert compact([[], [1], [], [2]]) == ((1,), (2,))
    assert compact([[]]) == ((),)


# single phases on the bridge at n = 0


def test_initial_solve_collides_without_memory():
    ctx = StepContext(BRIDGE4.models, BRIDGE4.couplings, BRIDGE4.initial_states, 0)
    plans = initial_solve(ctx, ((1, 2),), {})
    assert plans[1].states[1] == (0, 0) and plans[2].states[1] == (0, 0)
    assert ctx.infos[2] == InfoSet(2)


def test_detect_violations():
    ctx = StepContext(BRIDGE4.models, BRIDGE4.couplings, BRIDGE4.initial_states, 0)
    plans = initial_solve(ctx, ((1, 2),), {})
    assert detect_violations(plans[2], [plans[1]], BRIDGE4.couplings, 0) == {1}
    far = Plan(1, 0, 4, (), tuple((x, y + 4) for x, y in plans[1].states), 0)
    assert detect_violations(plans[2], [far], BRIDGE4.couplings, 0) == set()
    # a local (bridge) violation is not attributed to anyone
    off_bridge = Plan(2, 0, 1, ((1, 1),), ((-1, 0), (0, 1)), 0)
    assert detect_violations(off_bridge, [far], BRIDGE4.couplings, 0) == set()


def test_priority_pass_bridge():
    ctx = StepContext(BRIDGE4.models, BRIDGE4.couplings, BRIDGE4.initial_states, 0)
    plans = initial_solve(ctx, ((1, 2),), {})
    hierarchy, plans, memory, demotions = priority_pass(ctx, ((1, 2),), plans, LEXICOGRAPHIC, {1: (), 2: ()})
    assert hierarchy == ((1,), (2,))
    assert memory[2] == ((1, 0),)
    assert plans[2].value == 37
    assert [(d.agent, d.from_level, d.inducers) for d in demotions] == [(2, 1, (1,))]


def test_scheduler_step_bridge_first_controls():
    out = step0()
    assert out.applied == {1: (-1, 0), 2: (0, 0)}
    assert out.hierarchy_before == ((1, 2),)


def test_decoupled_agents_share_one_level():
    agents = [{"id": 1, "start": (3, 2), "reference": (3, -2)}, {"id": 2, "start": (-3, 2), "reference": (-3, -2)}]
    out = step0(build_scenario("custom", agents, horizon=3))
    assert out.hierarchy_after == ((1, 2),) and not out.demotions


def test_three_agents_in_a_corridor_need_three_levels():
    agents = [
        {"id": 1, "start": (-1, 0), "reference": (2, 0)},
        {"id": 2, "start": (1, 0), "reference": (-2, 0)},
        {"id": 3, "start": (2, 0), "reference": (-3, 0)},
    ]
    s = build_scenario("custom", agents, horizon=3, grid={"corridor": True})
    out = step0(s)
    assert out.hierarchy_after == ((1,), (2,), (3,))
    assert len(out.demotions) == 3


def test_single_agent_is_plain_solve():
    s = build_scenario("custom", [{"id": 4, "start": (2, 2), "reference": (0, 0)}], horizon=3)
    out = step0(s)
    assert out.plans[4] == solve_ocp(s.models[4], (2, 2), 0, InfoSet(4))


def test_parallel_levels_after_flattening(traces):
    trace = traces(6)
    assert all(s.hierarchy_after == ((1, 2),) for s in trace.steps[2:])


def test_executor_does_not_change_outcome():
    with ThreadPoolExecutor(max_workers=4) as pool:
        threaded = step0(build_scenario(), executor=pool)
    assert threaded == step0(build_scenario())


# invariants on random closed loops


def run(scenario, r, T=5, **kw):
    try:
        return run_closed_loop(scenario, r, T=T, **kw)
    except EmptyAdmissibleSet:
        return None


@settings(max_examples=40, deadline=None)
@given(scenarios(), rules)
def test_step_invariants(scenario, r):
    trace = run(scenario, r)
    if trace is None:
        return
    P = len(scenario.ids)
    for s in trace.steps:
        members = [p for level in s.hierarchy_after for p in level]
        assert sorted(members) == scenario.ids  # partition
        assert len(s.demotions) <= P * (P - 1) // 2  # termination
        levels = level_map(s.hierarchy_after)
        for i, level in enumerate(s.hierarchy_after):
            for j, p in enumerate(level):
                earlier = [s.plans[q] for q in level[:j]]
                assert detect_violations(s.plans[p], earlier, scenario.couplings, s.n) == set()
            if i > 0:
                # every lower-level agent depends on someone above it
                for p in level:
                    assert any(levels[q] < i + 1 for q, _ in s.memory[p])
        if r.deorder is DROP_ALL:
            for p in scenario.ids:
                assert (levels[p] == 1) == (not s.memory[p])


@settings(max_examples=40, deadline=None)
@given(scenarios(), rules)
def test_flat_hierarchy_means_independent_plans(scenario, r):
    trace = run(scenario, r)
    if trace is None:
        return
    for s in trace.steps:
        if len(s.hierarchy_after) == 1:
            for p in scenario.ids:
                model = scenario.models[p]
                assert solve_ocp(model, s.states[p], s.n, InfoSet(p), scenario.couplings) == s.plans[p]


@settings(max_examples=15, deadline=None)
@given(scenarios(), rules)
def test_concurrent_levels_are_deterministic(scenario, r):
    plain = run(scenario, r, T=4)
    with ThreadPoolExecutor(max_workers=3) as pool:
        threaded = run(scenario, r, T=4, executor=pool)
    assert plain == threaded
