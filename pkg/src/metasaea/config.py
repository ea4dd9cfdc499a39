"""Run configuration and the flat ``key = value`` config-file grammar.

Grammar, one assignment per line::

    # comment
    tasks = zdt1:d=8:m=2, dtlz2:d=8:m=3
    rounds = 40
    surrogate.backend = gp
    agent.lr = 0.0001

Dotted keys address a section (``budget``, ``surrogate``, ``evolve``,
``infill``, ``agent``); bare keys address :class:`RunConfig` itself. Lists
are comma separated. Unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .agent import AgentConfig, ControlMode, EnvConfig
from .ela import ELAMode
from .evolve import EvolveConfig
from .infill import CriterionId, InfillConfig
from .problems import (FAMILIES, TEST_DIM_DESK, TEST_DIM_PAPER, TRAIN_DIMS_DESK, TRAIN_DIMS_PAPER,
                       ConfigError, ProblemSpec, default_m, parse_task)
from .surrogate import SurrogateConfig


@dataclass
class RunConfig:
    tasks: list[str] = field(default_factory=lambda: ["zdt1:d=8:m=2", "dtlz2:d=8:m=3"])
    families: list[str] = field(default_factory=lambda: [f.lower() for f in FAMILIES])
    train_dims: list[int] = field(default_factory=lambda: list(TRAIN_DIMS_DESK))
    test_dim: int = TEST_DIM_DESK
    test_family: str = "zdt2"  # held out of paper-scale training, default eval target
    seed: int = 0
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    rounds: int = 40
    episodes_per_env: int = 1
    h: int = 16
    ela_mode: str = ELAMode.BI.value
    control: str = ControlMode.DUAL.value
    fixed_criterion: str = CriterionId.ND_A.name
    workers: int = 1
    repeats: int = 10
    budget: EnvConfig = field(default_factory=lambda: EnvConfig(
        n_init=20, fe_max=40, evolve=EvolveConfig(pop_size=20)))
    # desk scale: ~160 gradient steps in total, so the target net is synced every 5 rounds
    agent: AgentConfig = field(default_factory=lambda: AgentConfig(target_sync=20, updates_per_round=4))

    def test_task(self) -> str:
        return f"{self.test_family}:d={self.test_dim}:m={default_m(self.test_family)}"

    @property
    def surrogate(self) -> SurrogateConfig:
        return self.budget.surrogate

    @property
    def evolve(self) -> EvolveConfig:
        return self.budget.evolve

    @property
    def infill(self) -> InfillConfig:
        return self.budget.infill

    def problem_specs(self) -> list[ProblemSpec]:
        return [parse_task(t) for t in self.tasks]

    def criterion(self) -> CriterionId:
        try:
            return CriterionId[self.fixed_criterion.upper()]
        except KeyError:
            raise ConfigError(f"unknown criterion {self.fixed_criterion!r}") from None

    def validate(self) -> RunConfig:
        for t in self.tasks:
            parse_task(t)
        ELAMode(self.ela_mode)
        ControlMode(self.control)
        self.criterion()
        parse_task(self.test_task())
        return self


def paper_scale(cfg: RunConfig | None = None) -> RunConfig:
    """The full-scale schedule: 80 + 40 evaluations, 50 candidates, dims 15/20/25, test at 30.

    Training covers every family except ``test_family``.
    """
    cfg = cfg or RunConfig()
    cfg.budget.n_init, cfg.budget.fe_max = 80, 120
    cfg.budget.evolve.pop_size = 50
    cfg.train_dims = list(TRAIN_DIMS_PAPER)
    cfg.test_dim = TEST_DIM_PAPER
    cfg.rounds = 200
    cfg.agent.target_sync, cfg.agent.updates_per_round = 200, 8
    cfg.tasks = training_tasks([f.lower() for f in FAMILIES if f.lower() != cfg.test_family], cfg.train_dims)
    return cfg


def training_tasks(families, dims) -> list[str]:
    return [f"{fam.lower()}:d={d}:m={default_m(fam)}" for fam in families for d in dims]


# -- parsing -------------------------------------------------------------------------------------

_SECTIONS = {
    "budget": lambda c: c.budget,
    "surrogate": lambda c: c.budget.surrogate,
    "evolve": lambda c: c.budget.evolve,
    "infill": lambda c: c.budget.infill,
    "agent": lambda c: c.agent,
}


def _coerce(raw: str, tp, key: str):
    origin = typing.get_origin(tp)
    if origin is list:
        (inner,) = typing.get_args(tp)
        return [_coerce(p.strip(), inner, key) for p in raw.split(",") if p.strip()]
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if raw.lower() in ("none", ""):
            return None
        return _coerce(raw, args[0], key)
    try:
        if tp is bool:
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for key {key!r}") from None
    return raw


def _field_types(obj) -> dict:
    return typing.get_type_hints(type(obj))


def apply(cfg: RunConfig, key: str, raw: str) -> None:
    section, dot, name = key.partition(".")
    if dot:
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r} in key {key!r}")
        target = _SECTIONS[section](cfg)
    else:
        target, name = cfg, key
    fields = {f.name for f in dataclasses.fields(target)}
    if name not in fields or (target is cfg and name in ("budget", "agent")):
        raise ConfigError(f"unknown config key {key!r}")
    setattr(target, name, _coerce(raw.strip(), _field_types(target)[name], key))


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        apply(cfg, key.strip(), value)
    return cfg.validate()


def load_config(path: str | Path | None, base: RunConfig | None = None) -> RunConfig:
    if path is None:
        return (base or RunConfig()).validate()
    return parse_config_text(Path(path).read_text(), base)


def to_flat(cfg: RunConfig) -> dict[str, object]:
    """Inverse of the grammar: every key with its current value."""
    out: dict[str, object] = {}
    for f in dataclasses.fields(cfg):
        if f.name in ("budget", "agent"):
            continue
        out[f.name] = getattr(cfg, f.name)
    for section, get in _SECTIONS.items():
        obj = get(cfg)
        for f in dataclasses.fields(obj):
            val = getattr(obj, f.name)
            if dataclasses.is_dataclass(val):
                continue
            out[f"{section}.{f.name}"] = val
    return out
