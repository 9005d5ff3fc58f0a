"""Command-line entry point.

Exit codes: 0 ok, 1 usage or config error, 2 infeasible subproblem,
3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from fractions import Fraction

from .config import ConfigError, ScenarioConfig, load_config
from .solver import EmptyAdmissibleSet, enumerate_oracle, solve_ocp
from .simulation import run_closed_loop
from .stability import InfeasibleAt, NonmonotoneWeights, TraceTooShort, feasibility_check, local_alpha, weighted_alpha
from .trace_io import TraceFormatError, dumps_trace, format_rational, read_trace

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_VERIFY = 3

EXPORT_FORMATS = ("csv", "plotdata")
CSV_COLUMNS = ("n", "agent", "state", "value", "stage_cost", "level")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which is reserved for infeasibility here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _err(msg: str) -> None:
    print(f"dnmpc: {msg}", file=sys.stderr)


def simulate(cfg: ScenarioConfig, workers: int = 0, solver=solve_ocp):
    scenario = cfg.scenario()
    kwargs = dict(rules=cfg.rules(), network=cfg.network_model(), T=cfg.steps, solver=solver, config=cfg.to_dict())
    if workers > 0:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return run_closed_loop(scenario, executor=pool, **kwargs)
    return run_closed_loop(scenario, **kwargs)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    trace = simulate(cfg, args.workers)
    text = dumps_trace(trace)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_range(text: str) -> range:
    try:
        a, b = text.split("..")
        lo, hi = int(a), int(b)
    except ValueError:
        raise UsageError(f"bad horizon range {text!r}, expected A..B") from None
    if lo < 1 or hi < lo:
        raise UsageError(f"horizon range {text!r} must satisfy 1 <= A <= B")
    return range(lo, hi + 1)


def sweep_rows(cfg: ScenarioConfig, horizons, agent: int):
    for N in horizons:
        trace = simulate(cfg.with_horizon(N))
        if agent not in trace.agents:
            raise UsageError(f"agent {agent} not in scenario")
        values = trace.values(agent)
        report = local_alpha(trace, agent)
        yield N, values[0], values[1], report.alpha if report.valid else None


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(("N", "V0", "V1", "alpha"))
    for N, v0, v1, alpha in sweep_rows(cfg, _parse_range(args.horizons), args.agent):
        out.writerow((N, format_rational(v0), format_rational(v1), format_rational(alpha)))
    return EXIT_OK


def _report_json(report) -> dict:
    return {
        "alpha": format_rational(report.alpha) if report.valid else None,
        "binding_index": report.binding_index,
        "valid": report.valid,
        "reason": report.reason,
        "ratios": [None if r is None else format_rational(r) for r in report.per_step_ratios],
    }


def _parse_weights(text: str) -> list:
    try:
        return [Fraction(w) for w in text.split(",")]
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"bad weight list {text!r}") from None


def cmd_alpha(args) -> int:
    trace = read_trace(args.trace)
    if args.per_agent:
        doc = {"per_agent": {str(p): _report_json(local_alpha(trace, p)) for p in trace.agents}}
    else:
        weights = _parse_weights(args.weights) if args.weights else [1] * len(trace.agents)
        doc = {"weights": [format_rational(w) for w in weights], "weighted": _report_json(weighted_alpha(trace, weights))}
    print(json.dumps(doc, indent=2))
    return EXIT_OK


class Mismatch(AssertionError):
    def __init__(self, case: dict):
        self.case = case
        super().__init__(json.dumps(case))


def checked_solver(solver):
    """Wrap `solver` so each call is cross-checked against the brute-force oracle."""

    def solve(model, x0, n, info, couplings=()):
        couplings = tuple(couplings)
        try:
            got = solver(model, x0, n, info, couplings)
        except EmptyAdmissibleSet:
            got = None
        try:
            want = enumerate_oracle(model, x0, n, info, couplings)
        except EmptyAdmissibleSet:
            want = None
        same = (got is None and want is None) or (
            got is not None and want is not None and got.value == want.value and got.controls == want.controls
        )
        if not same:
            raise Mismatch(
                {
                    "agent": model.id,
                    "n": n,
                    "x0": list(x0),
                    "horizon": model.horizon,
                    "info": {str(q): [r.solved_at, r.horizon, [list(x) for x in r.states]] for q, r in info.records.items()},
                    "solver": None if got is None else {"value": format_rational(got.value), "controls": got.controls},
                    "oracle": None if want is None else {"value": format_rational(want.value), "controls": want.controls},
                }
            )
        if got is None:
            raise EmptyAdmissibleSet(model.id, n)
        return got

    return solve


def random_case(cfg: ScenarioConfig, rng: random.Random, max_horizon: int, box: int = 3) -> ScenarioConfig:
    """Perturb starts and references inside [-box, box]^2 with distinct feasible starts."""
    world = cfg.scenario().world
    ids = cfg.scenario().ids
    cells = [(x, y) for x in range(-box, box + 1) for y in range(-box, box + 1) if world.state_ok((x, y))]
    starts = rng.sample(cells, len(ids))
    agents = tuple(
        {"id": p, "start": list(s), "reference": list(rng.choice(cells)), "horizon": rng.randint(1, max_horizon)}
        for p, s in zip(ids, starts)
    )
    grid = cfg.grid
    if cfg.world != "custom":
        grid = {"bridge": world.bridge, "corridor": world.corridor, "bounds": world.bounds}
    return replace(cfg, world="custom", agents=agents, grid=grid)


def verify(cfg: ScenarioConfig, cases: int, max_horizon: int, seed: int, solver=solve_ocp, steps: int = 6):
    """Return (passed, infeasible, counterexample or None)."""
    rng = random.Random(seed)
    wrapped = checked_solver(solver)
    infeasible = 0
    for i in range(cases):
        case = replace(random_case(cfg, rng, max_horizon), steps=min(cfg.steps, steps))
        try:
            trace = simulate(case, solver=wrapped)
        except Mismatch as exc:
            return i, infeasible, {"case": i, "config": case.to_dict(), "mismatch": exc.case}
        except EmptyAdmissibleSet:
            infeasible += 1
            continue
        try:
            feasibility_check(trace, case.scenario())
        except InfeasibleAt as exc:
            return i, infeasible, {"case": i, "config": case.to_dict(), "infeasible_at": exc.n, "constraint": exc.constraint}
    return cases, infeasible, None


def cmd_verify(args, solver=solve_ocp) -> int:
    if args.cases < 1:
        raise UsageError("--cases must be at least 1")
    if args.max_horizon < 1:
        raise UsageError("--max-horizon must be at least 1")
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    passed, infeasible, failure = verify(cfg, args.cases, args.max_horizon, seed, solver)
    if failure is not None:
        print(json.dumps({"status": "FAIL", "passed": passed, **failure}, default=list, indent=2))
        return EXIT_VERIFY
    print(json.dumps({"status": "PASS", "cases": passed, "infeasible_runs": infeasible}))
    return EXIT_OK


def _plot_number(x):
    if isinstance(x, Fraction):
        return x.numerator if x.denominator == 1 else float(x)
    return x


def export_text(trace, fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(CSV_COLUMNS)
        for s in trace.steps:
            for p in sorted(s.states):
                out.writerow(
                    (s.n, p, json.dumps(list(s.states[p])), format_rational(s.values[p]),
                     format_rational(s.stage_costs[p]), s.levels[p])
                )
        return buf.getvalue()
    if fmt == "plotdata":
        series = [
            {"agent": p, "x": [s.n for s in trace.steps], "y": [_plot_number(v) for v in trace.values(p)]}
            for p in trace.agents
        ]
        return json.dumps({"quantity": "value", "series": series}, indent=2) + "\n"
    raise UsageError(f"unknown export format {fmt!r}; choose from {', '.join(EXPORT_FORMATS)}")


def cmd_export(args) -> int:
    text = export_text(read_trace(args.trace), args.format)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dnmpc", description="Hierarchical distributed NMPC simulator and stability lab.")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="simulate a scenario and write a JSONL trace")
    run.add_argument("config", nargs="?", help="JSON config (defaults apply when omitted)")
    run.add_argument("--out", help="trace path (default: standard output)")
    run.add_argument("--workers", type=int, default=0, help="thread pool size for same-level solves")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="values and local alpha over a range of horizons")
    sweep.add_argument("config", nargs="?")
    sweep.add_argument("--horizons", required=True, help="inclusive range A..B")
    sweep.add_argument("--agent", type=int, required=True)
    sweep.set_defaults(func=cmd_sweep)

    alpha = sub.add_parser("alpha", help="relaxed Lyapunov degree of a trace")
    alpha.add_argument("--trace", required=True)
    mode = alpha.add_mutually_exclusive_group()
    mode.add_argument("--weights", help="comma-separated positive weights in agent-id order")
    mode.add_argument("--per-agent", action="store_true")
    alpha.set_defaults(func=cmd_alpha)

    ver = sub.add_parser("verify", help="randomized solver-versus-oracle and feasibility check")
    ver.add_argument("config", nargs="?")
    ver.add_argument("--cases", type=int, default=100)
    ver.add_argument("--max-horizon", type=int, default=4)
    ver.add_argument("--seed", type=int)
    ver.set_defaults(func=cmd_verify)

    exp = sub.add_parser("export", help="flatten a trace to CSV or plot series")
    exp.add_argument("--trace", required=True)
    exp.add_argument("--format", default="csv")
    exp.add_argument("--out")
    exp.set_defaults(func=cmd_export)
    return parser


def main(argv=None, *, solver=solve_ocp) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.func is cmd_verify:
            return cmd_verify(args, solver)
        return args.func(args)
    except EmptyAdmissibleSet as exc:
        where = f" (closed-loop step {exc.step})" if exc.step is not None else ""
        _err(f"infeasible: {exc}{where}")
        return EXIT_INFEASIBLE
    except (ConfigError, UsageError, TraceFormatError, TraceTooShort, NonmonotoneWeights, OSError) as exc:
        _err(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
