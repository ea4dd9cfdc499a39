"""ZDT/DTLZ benchmark problems, LHS initialization and budget bookkeeping."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

ZDT = ("ZDT1", "ZDT2", "ZDT3")
DTLZ = ("DTLZ2", "DTLZ3", "DTLZ4", "DTLZ5", "DTLZ6", "DTLZ7")
FAMILIES = ZDT + DTLZ

TRAIN_DIMS_PAPER = (15, 20, 25)
TEST_DIM_PAPER = 30
TRAIN_DIMS_DESK = (8, 10)
TEST_DIM_DESK = 12

EVALLOG_SCHEMA = "evallog/v1"


class DomainError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    d: int
    m: int
    lower: np.ndarray = field(default=None, compare=False, repr=False)
    upper: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        name = self.name.upper()
        object.__setattr__(self, "name", name)
        if name not in FAMILIES:
            raise ConfigError(f"unknown problem {self.name!r}")
        if name in ZDT and self.m != 2:
            raise ConfigError(f"{name} is bi-objective, got m={self.m}")
        if name in DTLZ and self.m not in (2, 3):
            raise ConfigError(f"{name} supports m in {{2, 3}}, got m={self.m}")
        if self.d < self.m:
            raise ConfigError(f"{name} needs d >= m, got d={self.d}, m={self.m}")
        if self.lower is None:
            object.__setattr__(self, "lower", np.zeros(self.d))
        if self.upper is None:
            object.__setattr__(self, "upper", np.ones(self.d))
        if np.any(np.asarray(self.lower) >= np.asarray(self.upper)):
            raise ConfigError("lower bounds must be strictly below upper bounds")

    @property
    def task(self) -> str:
        return f"{self.name.lower()}:d={self.d}:m={self.m}"

    @property
    def family(self) -> str:
        return self.name


def default_m(name: str) -> int:
    return 2 if name.upper() in ZDT else 3


def parse_task(text: str) -> ProblemSpec:
    """Parse ``"zdt1:d=30:m=2"``; omitted fields fall back to d=30 and the family's default m."""
    tokens = [t.strip() for t in text.strip().split(":") if t.strip()]
    if not tokens:
        raise ConfigError("empty task string")
    name = tokens[0].upper()
    if name not in FAMILIES:
        raise ConfigError(f"unknown problem {tokens[0]!r} in task {text!r}")
    d, m = TEST_DIM_PAPER, default_m(name)
    for tok in tokens[1:]:
        key, sep, val = tok.partition("=")
        if not sep or key not in ("d", "m"):
            raise ConfigError(f"bad token {tok!r} in task {text!r}")
        try:
            num = int(val)
        except ValueError:
            raise ConfigError(f"bad token {tok!r} in task {text!r}") from None
        if key == "d":
            d = num
        else:
            m = num
    return ProblemSpec(name, d, m)


# -- objective functions (rows of X are solutions) --------------------------------------

def _zdt(name: str, X: np.ndarray) -> np.ndarray:
    d = X.shape[1]
    f1 = X[:, 0]
    g = 1.0 + 9.0 * X[:, 1:].sum(axis=1) / (d - 1)
    r = f1 / g
    if name == "ZDT1":
        hv = 1.0 - np.sqrt(r)
    elif name == "ZDT2":
        hv = 1.0 - r**2
    else:
        hv = 1.0 - np.sqrt(r) - r * np.sin(10.0 * np.pi * f1)
    return np.column_stack([f1, g * hv])


def _sphere_objectives(theta: np.ndarray, g: np.ndarray, m: int) -> np.ndarray:
    # theta holds the m-1 angles already scaled to [0, pi/2]
    n = theta.shape[0]
    F = np.empty((n, m))
    for i in range(m):
        f = 1.0 + g
        f = f * np.prod(np.cos(theta[:, : m - 1 - i]), axis=1)
        if i > 0:
            f = f * np.sin(theta[:, m - 1 - i])
        F[:, i] = f
    return F


def _dtlz(name: str, X: np.ndarray, m: int) -> np.ndarray:
    xp, xm = X[:, : m - 1], X[:, m - 1 :]
    k = xm.shape[1]
    if name in ("DTLZ2", "DTLZ4", "DTLZ5"):
        g = ((xm - 0.5) ** 2).sum(axis=1)
    elif name == "DTLZ3":
        g = 100.0 * (k + ((xm - 0.5) ** 2 - np.cos(20.0 * np.pi * (xm - 0.5))).sum(axis=1))
    elif name == "DTLZ6":
        g = (xm**0.1).sum(axis=1)
    else:  # DTLZ7
        g = 1.0 + 9.0 / k * xm.sum(axis=1)
        f = xp.copy()
        hsum = (f / (1.0 + g)[:, None] * (1.0 + np.sin(3.0 * np.pi * f))).sum(axis=1)
        return np.column_stack([f, (1.0 + g) * (m - hsum)])

    if name == "DTLZ4":
        theta = xp**100.0 * (np.pi / 2)
    elif name in ("DTLZ5", "DTLZ6"):
        theta = np.empty_like(xp)
        theta[:, 0] = xp[:, 0] * (np.pi / 2)
        if m > 2:
            theta[:, 1:] = (np.pi / (4.0 * (1.0 + g)))[:, None] * (1.0 + 2.0 * g[:, None] * xp[:, 1:])
    else:
        theta = xp * (np.pi / 2)
    return _sphere_objectives(theta, g, m)


def evaluate_batch(spec: ProblemSpec, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != spec.d:
        raise DomainError(f"{spec.name} expects d={spec.d}, got {X.shape[1]}")
    if np.any(X < spec.lower) or np.any(X > spec.upper):
        raise DomainError(f"input outside the box bounds of {spec.name}")
    # all suites live on [0,1]^d; map generic bounds there
    U = (X - spec.lower) / (spec.upper - spec.lower)
    if spec.name in ZDT:
        return _zdt(spec.name, U)
    return _dtlz(spec.name, U, spec.m)


def evaluate(spec: ProblemSpec, x) -> np.ndarray:
    return evaluate_batch(spec, np.asarray(x, dtype=np.float64)[None, :])[0]


# ideal/nadir of the analytic Pareto fronts, used for HV normalization
_DTLZ7_F_LAST_MIN = {2: 2.3070044, 3: 2.6140087}
_DTLZ7_DISCONNECT_MAX = 0.8594009
_ZDT3_F2_MIN = -0.7733690
_ZDT3_F1_MAX = 0.8518328


def front_bounds(spec: ProblemSpec) -> tuple[np.ndarray, np.ndarray]:
    m = spec.m
    if spec.name in ("ZDT1", "ZDT2"):
        return np.zeros(2), np.ones(2)
    if spec.name == "ZDT3":
        return np.array([0.0, _ZDT3_F2_MIN]), np.array([_ZDT3_F1_MAX, 1.0])
    if spec.name == "DTLZ7":
        ideal = np.zeros(m)
        ideal[-1] = _DTLZ7_F_LAST_MIN[m]
        nadir = np.full(m, _DTLZ7_DISCONNECT_MAX)
        nadir[-1] = 2.0 * m
        return ideal, nadir
    if spec.name in ("DTLZ5", "DTLZ6") and m == 3:
        half = np.sqrt(0.5)
        return np.zeros(3), np.array([half, half, 1.0])
    return np.zeros(m), np.ones(m)


def sample_front(spec: ProblemSpec, n: int = 200) -> np.ndarray:
    """Points on the analytic Pareto-optimal set (position variables on a grid)."""
    m = spec.m
    if m == 2:
        pos = np.linspace(0.0, 1.0, n)[:, None]
    else:
        side = max(2, int(round(np.sqrt(n))))
        g1, g2 = np.meshgrid(np.linspace(0, 1, side), np.linspace(0, 1, side))
        pos = np.column_stack([g1.ravel(), g2.ravel()])
    rest = spec.d - pos.shape[1]
    if spec.name in ZDT or spec.name in ("DTLZ6", "DTLZ7"):
        dist = np.zeros((pos.shape[0], rest))
    else:
        dist = np.full((pos.shape[0], rest), 0.5)
    return evaluate_batch(spec, np.hstack([pos, dist]))


# -- initialization & budget -------------------------------------------------------------

def lhs_init(spec: ProblemSpec, n: int, seed: int) -> np.ndarray:
    """Latin hypercube: one jittered sample per stratum per dimension."""
    if n < 1:
        raise ValueError("LHS needs n >= 1")
    unit = qmc.LatinHypercube(d=spec.d, scramble=True, seed=np.random.default_rng(seed)).random(n)
    return spec.lower + unit * (spec.upper - spec.lower)


@dataclass
class BudgetState:
    n_init: int = 80
    fe_max: int = 120
    t: int = 0

    def __post_init__(self):
        if self.t == 0:
            self.t = self.n_init
        if not (0 < self.n_init <= self.t <= self.fe_max):
            raise ValueError(f"invalid budget n_init={self.n_init} t={self.t} fe_max={self.fe_max}")

    @property
    def exhausted(self) -> bool:
        return self.t >= self.fe_max

    @property
    def remaining(self) -> int:
        return self.fe_max - self.t

    @property
    def rho(self) -> float:
        return self.t / self.fe_max

    def consume(self, k: int) -> None:
        if self.t + k > self.fe_max:
            raise ValueError(f"consuming {k} evaluations would exceed fe_max={self.fe_max}")
        self.t += k


class EvalLog:
    """Appends true evaluations to CSV rows (task, seed, t, x..., y..., action)."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.rows: list[list] = []

    @property
    def header(self) -> list[str]:
        return (["task", "seed", "t"] + [f"x{j + 1}" for j in range(self.spec.d)]
                + [f"y{i + 1}" for i in range(self.spec.m)] + ["action"])

    def append(self, seed: int, t: int, x: np.ndarray, y: np.ndarray, action: str = "init") -> None:
        self.rows.append([self.spec.task, seed, t, *map(float, x), *map(float, y), action])

    def write(self, path: str | Path, append: bool = False) -> None:
        path = Path(path)
        fresh = not append or not path.exists()
        with path.open("a" if append else "w", newline="") as fh:
            w = csv.writer(fh)
            if fresh:
                fh.write(f"# schema={EVALLOG_SCHEMA}\n")
                w.writerow(self.header)
            w.writerows(self.rows)
