"""Scenario configuration files (JSON, exact key names, unknown keys rejected)."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path

from .bridge import DEFAULT_HORIZON, KING, ORTHOGONAL, STRICT, SWAP_ONLY, Scenario, build_scenario
from .scheduler import DEORDERING_RULES, PRIORITY_RULES, Rules
from .simulation import NetworkModel, schedule_adjacency

WORLDS = ("bridge_default", "corridor_deadlock", "custom")
SEED_ENV = "DNMPC_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    world: str = "bridge_default"
    agents: tuple | None = None
    horizon: int = DEFAULT_HORIZON
    moves: str = ORTHOGONAL
    swap_rule: str = SWAP_ONLY
    priority_rule: str = "lexicographic"
    deorder_rule: str = "drop_all"
    steps: int = 8
    network: dict = field(default_factory=dict)
    seed: int = 0
    cost_weight: str = "0"
    grid: dict | None = None

    def __post_init__(self):
        if self.world not in WORLDS:
            raise ConfigError(f"unknown world {self.world!r}")
        if self.moves not in (ORTHOGONAL, KING):
            raise ConfigError(f"unknown move mode {self.moves!r}")
        if self.swap_rule not in (SWAP_ONLY, STRICT):
            raise ConfigError(f"unknown swap rule {self.swap_rule!r}")
        if self.priority_rule not in PRIORITY_RULES:
            raise ConfigError(f"unknown priority rule {self.priority_rule!r}")
        if self.deorder_rule not in DEORDERING_RULES:
            raise ConfigError(f"unknown deordering rule {self.deorder_rule!r}")
        if not isinstance(self.steps, int) or self.steps < 1:
            raise ConfigError("steps must be a positive integer")
        if not isinstance(self.horizon, int) or self.horizon < 1:
            raise ConfigError("horizon must be a positive integer")
        try:
            if Fraction(self.cost_weight) < 0:
                raise ConfigError("cost_weight must be nonnegative")
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"bad cost_weight {self.cost_weight!r}") from None
        if self.world == "custom" and not self.agents:
            raise ConfigError("custom world needs agents")
        if self.agents is not None:
            seen = set()
            for a in self.agents:
                unknown = set(a) - {"id", "start", "reference", "horizon"}
                if unknown:
                    raise ConfigError(f"unknown agent keys {sorted(unknown)}")
                if a.get("id") in seen:
                    raise ConfigError(f"duplicate agent id {a.get('id')}")
                seen.add(a.get("id"))
                h = a.get("horizon")
                if h is not None and (not isinstance(h, int) or h < 1):
                    raise ConfigError(f"agent {a.get('id')}: horizon must be a positive integer")
        unknown = set(self.network) - {"loss", "delay", "adjacency", "edge_loss", "edge_delay"}
        if unknown:
            raise ConfigError(f"unknown network keys {sorted(unknown)}")
        # build once so bad values fail here rather than mid-run
        try:
            self.network_model()
            self.scenario()
        except ConfigError:
            raise
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None

    @classmethod
    def from_dict(cls, data: dict) -> ScenarioConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        data = dict(data)
        if data.get("agents") is not None:
            data["agents"] = tuple(dict(a) for a in data["agents"])
        if "cost_weight" in data:
            data["cost_weight"] = str(data["cost_weight"])
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["agents"] is not None:
            d["agents"] = [dict(a) for a in d["agents"]]
        return d

    def with_horizon(self, horizon: int) -> ScenarioConfig:
        agents = None
        if self.agents is not None:
            agents = tuple({**a, "horizon": horizon} for a in self.agents)
        return replace(self, horizon=horizon, agents=agents)

    def scenario(self) -> Scenario:
        return build_scenario(
            self.world,
            self.agents,
            horizon=self.horizon,
            moves=self.moves,
            swap_rule=self.swap_rule,
            cost_weight=Fraction(self.cost_weight),
            grid=self.grid,
        )

    def rules(self) -> Rules:
        return Rules.named(self.priority_rule, self.deorder_rule)

    def network_model(self) -> NetworkModel:
        net = self.network
        adjacency = None
        if net.get("adjacency") is not None:
            adjacency = schedule_adjacency((e["from"], e["edges"]) for e in net["adjacency"])
        return NetworkModel(
            loss=float(net.get("loss", 0.0)),
            delay=int(net.get("delay", 0)),
            seed=self.seed,
            adjacency=adjacency,
            edge_loss={_edge(k): float(v) for k, v in net.get("edge_loss", {}).items()},
            edge_delay={_edge(k): int(v) for k, v in net.get("edge_delay", {}).items()},
        )


def _edge(key: str) -> tuple[int, int]:
    """Parse "2->1" into (2, 1)."""
    try:
        a, b = key.split("->")
        return int(a), int(b)
    except ValueError:
        raise ConfigError(f"bad edge key {key!r}, expected 'source->recipient'") from None


def load_config(path: str | os.PathLike | None, env=os.environ) -> ScenarioConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    try:
        cfg = ScenarioConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if env.get(SEED_ENV):
        try:
            cfg = replace(cfg, seed=int(env[SEED_ENV]))
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    return cfg
