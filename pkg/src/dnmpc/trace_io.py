"""JSONL trace format.

Line 1 is a header ``{"kind": "header", "format": ..., "config": {...}}``,
then one object per step, then ``{"kind": "final", ...}`` with the state
after the last step. Exact numbers are written as {"num": p, "den": q}.
"""

from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path

from .core import NeighborRecord
from .simulation import RunTrace, StepRecord
from .solver import Plan

FORMAT = "dnmpc-trace/1"
STEP_KEYS = (
    "n",
    "states",
    "controls",
    "values",
    "stage_costs",
    "levels",
    "memory",
    "demotions",
    "hierarchy_before",
    "hierarchy_after",
    "plans",
    "info",
)


class TraceFormatError(ValueError):
    pass


def encode_number(x):
    if isinstance(x, float):
        return x
    f = Fraction(x)
    return {"num": f.numerator, "den": f.denominator}


def decode_number(obj):
    if isinstance(obj, dict):
        f = Fraction(obj["num"], obj["den"])
        return f.numerator if f.denominator == 1 else f
    return obj


def format_rational(x) -> str:
    if x is None:
        return "invalid"
    if isinstance(x, float):
        return repr(x)
    f = Fraction(x)
    return str(f.numerator) if f.denominator == 1 else f"{f.numerator}/{f.denominator}"


def _by_agent(d: dict, fn=lambda v: v) -> dict:
    return {str(p): fn(d[p]) for p in sorted(d)}


def _state(x):
    return list(x) if isinstance(x, tuple) else x


def _unstate(x):
    return tuple(x) if isinstance(x, list) else x


def _plan(plan: Plan) -> dict:
    return {
        "solved_at": plan.solved_at,
        "horizon": plan.horizon,
        "controls": [_state(u) for u in plan.controls],
        "states": [_state(x) for x in plan.states],
        "value": encode_number(plan.value),
    }


def _record(r: NeighborRecord) -> dict:
    return {"source": r.source, "solved_at": r.solved_at, "horizon": r.horizon, "states": [_state(x) for x in r.states]}


def _unrecord(d: dict) -> NeighborRecord:
    return NeighborRecord(d["source"], d["solved_at"], d["horizon"], tuple(_unstate(x) for x in d["states"]))


def step_to_json(step: StepRecord) -> dict:
    return {
        "n": step.n,
        "states": _by_agent(step.states, _state),
        "controls": _by_agent(step.controls, _state),
        "values": _by_agent(step.values, encode_number),
        "stage_costs": _by_agent(step.stage_costs, encode_number),
        "levels": _by_agent(step.levels),
        "memory": _by_agent(step.memory, lambda m: [list(e) for e in m]),
        "demotions": [{"agent": a, "from_level": lvl, "inducers": list(ind)} for a, lvl, ind in step.demotions],
        "hierarchy_before": [list(level) for level in step.hierarchy_before],
        "hierarchy_after": [list(level) for level in step.hierarchy_after],
        "plans": {str(p): _plan(step.plans[p]) for p in sorted(step.plans)},
        "info": _by_agent(step.info, lambda recs: [_record(r) for r in recs]),
    }


def _agents(d: dict, fn=lambda v: v) -> dict:
    return {int(p): fn(v) for p, v in d.items()}


def step_from_json(obj: dict) -> StepRecord:
    missing = [k for k in STEP_KEYS if k not in obj]
    if missing:
        raise TraceFormatError(f"step object missing keys {missing}")
    plans = {
        int(p): Plan(
            int(p),
            d["solved_at"],
            d["horizon"],
            tuple(_unstate(u) for u in d["controls"]),
            tuple(_unstate(x) for x in d["states"]),
            decode_number(d["value"]),
        )
        for p, d in obj["plans"].items()
    }
    return StepRecord(
        n=obj["n"],
        states=_agents(obj["states"], _unstate),
        controls=_agents(obj["controls"], _unstate),
        values=_agents(obj["values"], decode_number),
        stage_costs=_agents(obj["stage_costs"], decode_number),
        levels=_agents(obj["levels"]),
        memory=_agents(obj["memory"], lambda m: tuple(tuple(e) for e in m)),
        demotions=[(d["agent"], d["from_level"], tuple(d["inducers"])) for d in obj["demotions"]],
        hierarchy_before=tuple(tuple(level) for level in obj["hierarchy_before"]),
        hierarchy_after=tuple(tuple(level) for level in obj["hierarchy_after"]),
        plans=plans,
        info=_agents(obj["info"], lambda recs: tuple(_unrecord(r) for r in recs)),
    )


def dumps_trace(trace: RunTrace) -> str:
    lines = [json.dumps({"kind": "header", "format": FORMAT, "config": trace.config})]
    lines += [json.dumps(step_to_json(s)) for s in trace.steps]
    lines.append(
        json.dumps({"kind": "final", "n": len(trace.steps), "states": _by_agent(trace.final_states, _state)})
    )
    return "\n".join(lines) + "\n"


def loads_trace(text: str) -> RunTrace:
    config = None
    steps = []
    final = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"line {lineno}: {exc}") from None
        if not isinstance(obj, dict):
            raise TraceFormatError(f"line {lineno}: expected a JSON object")
        kind = obj.get("kind")
        try:
            if kind == "header":
                if obj.get("format") != FORMAT:
                    raise TraceFormatError(f"unsupported trace format {obj.get('format')!r}")
                config = obj.get("config", {})
            elif kind == "final":
                final = _agents(obj["states"], _unstate)
            elif kind is None:
                steps.append(step_from_json(obj))
            else:
                raise TraceFormatError(f"unknown record kind {kind!r}")
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceFormatError(f"line {lineno}: {exc}") from None
    if config is None:
        raise TraceFormatError("trace has no header")
    if [s.n for s in steps] != list(range(len(steps))):
        raise TraceFormatError("step indices are not consecutive from 0")
    return RunTrace(config, steps, final)


def write_trace(trace: RunTrace, path) -> None:
    Path(path).write_text(dumps_trace(trace))


def read_trace(path) -> RunTrace:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise TraceFormatError(str(exc)) from None
    return loads_trace(text)
