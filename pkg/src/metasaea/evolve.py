"""NSGA-III candidate generation in the surrogate evaluation space.

The evolver keeps its own parent population between decisions. One call to
:meth:`NSGA3Generator.resample` is one generation: offspring are bred from
the parents and scored by the surrogate (they become the new surrogate
population), then parents and offspring compete in NSGA-III environmental
selection for the next parent set. Newly truly-evaluated solutions are fed
back in as immigrants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .pareto import (ReferenceDirectionSet, crowding_distance, das_dennis, default_divisions,
                     nd_rank, nds, perpendicular_distance)
from .surrogate import SurrogateModel, SurrogatePopulation, TruePopulation, predict_batch


@dataclass
class EvolveConfig:
    pop_size: int = 50
    sbx_eta: float = 15.0
    sbx_prob: float = 0.9
    pm_eta: float = 20.0
    pm_prob: float | None = None  # None -> 1/d
    H: int | None = None  # None -> smallest lattice with >= 20 directions
    generator: str = "nsga3"

    def __post_init__(self):
        if self.pop_size < 2:
            raise ValueError("pop_size must be >= 2")
        for name in ("sbx_prob", "pm_prob"):
            p = getattr(self, name)
            if p is not None and not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    def directions(self, m: int) -> ReferenceDirectionSet:
        return das_dennis(m, self.H if self.H is not None else default_divisions(m))


# -- variation operators ------------------------------------------------------------------

def binary_tournament(rank: np.ndarray, crowd: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.integers(0, len(rank), size=n)
    b = rng.integers(0, len(rank), size=n)
    better_a = (rank[a] < rank[b]) | ((rank[a] == rank[b]) & (crowd[a] >= crowd[b]))
    return np.where(better_a, a, b)


def sbx(p1: np.ndarray, p2: np.ndarray, eta: float, prob: float, rng: np.random.Generator,
        lower: np.ndarray, upper: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Simulated binary crossover on row-aligned parent pairs; no variable swapping."""
    c1, c2 = p1.copy(), p2.copy()
    n, d = p1.shape
    do_pair = rng.random(n) < prob
    do_var = (rng.random((n, d)) < 0.5) & do_pair[:, None]
    u = rng.random((n, d))
    beta = np.where(u <= 0.5, (2 * u) ** (1.0 / (eta + 1)), (1.0 / (2 * (1 - u))) ** (1.0 / (eta + 1)))
    y1 = 0.5 * ((1 + beta) * p1 + (1 - beta) * p2)
    y2 = 0.5 * ((1 - beta) * p1 + (1 + beta) * p2)
    c1[do_var] = y1[do_var]
    c2[do_var] = y2[do_var]
    return np.clip(c1, lower, upper), np.clip(c2, lower, upper)


def polynomial_mutation(X: np.ndarray, eta: float, prob: float, rng: np.random.Generator,
                        lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    X = X.copy()
    span = upper - lower
    mask = rng.random(X.shape) < prob
    if not mask.any():
        return X
    u = rng.random(X.shape)
    d1 = (X - lower) / span
    d2 = (upper - X) / span
    mpow = 1.0 / (eta + 1)
    low = u < 0.5
    xy = np.where(low, 1 - d1, 1 - d2)
    val = np.where(low, 2 * u + (1 - 2 * u) * xy ** (eta + 1),
                   2 * (1 - u) + 2 * (u - 0.5) * xy ** (eta + 1))
    dq = np.where(low, val**mpow - 1, 1 - val**mpow)
    X[mask] = (X + dq * span)[mask]
    return np.clip(X, lower, upper)


# -- NSGA-III survival -------------------------------------------------------------------

def _normalize_front_space(F: np.ndarray) -> np.ndarray:
    ideal = F.min(axis=0)
    T = F - ideal
    m = F.shape[1]
    # extreme points by achievement scalarization along each axis
    W = np.eye(m) + 1e-6
    asf = np.max(T[:, None, :] / W[None, :, :], axis=2)
    extreme = T[np.argmin(asf, axis=0)]
    intercepts = None
    try:
        b = np.linalg.solve(extreme, np.ones(m))
        if np.all(b > 1e-12):
            intercepts = 1.0 / b
    except np.linalg.LinAlgError:
        pass
    worst = T.max(axis=0)
    if intercepts is None or np.any(intercepts < 1e-6) or np.any(~np.isfinite(intercepts)):
        intercepts = worst
    intercepts = np.where(intercepts > 1e-12, intercepts, 1.0)
    return T / intercepts


def environmental_select(pool: SurrogatePopulation, k: int, dirs: ReferenceDirectionSet,
                         rng: np.random.Generator | None = None) -> np.ndarray:
    """NSGA-III survival on predicted objectives; returns k distinct pool indices."""
    n = len(pool)
    if k > n:
        raise ValueError(f"cannot select {k} survivors from a pool of {n}")
    rng = rng if rng is not None else np.random.default_rng(0)
    fronts = nds(pool.y)
    chosen: list[int] = []
    last: list[int] = []
    for front in fronts:
        if len(chosen) + len(front) <= k:
            chosen.extend(sorted(front))
            if len(chosen) == k:
                return np.array(chosen, dtype=int)
        else:
            last = sorted(front)
            break
    considered = np.array(chosen + last, dtype=int)
    Z = _normalize_front_space(pool.y[considered])
    dist = perpendicular_distance(Z, dirs.dirs)
    niche = dist.argmin(axis=1)
    nd = dist[np.arange(len(considered)), niche]
    n_chosen = len(chosen)
    counts = np.bincount(niche[:n_chosen], minlength=len(dirs))
    remaining = {i: (int(niche[n_chosen + i]), float(nd[n_chosen + i])) for i in range(len(last))}
    active = np.ones(len(dirs), dtype=bool)
    need = k - n_chosen
    picked: list[int] = []
    while len(picked) < need:
        cand_dirs = np.flatnonzero(active)
        low = counts[cand_dirs].min()
        tied = cand_dirs[counts[cand_dirs] == low]
        j = int(rng.choice(tied))
        members = [i for i, (nj, _) in remaining.items() if nj == j]
        if not members:
            active[j] = False
            continue
        if counts[j] == 0:
            pick = min(members, key=lambda i: (remaining[i][1], i))
        else:
            pick = int(rng.choice(members))
        picked.append(pick)
        del remaining[pick]
        counts[j] += 1
    return np.array(chosen + [last[i] for i in picked], dtype=int)


# -- generator ------------------------------------------------------------------------------

class Generator(Protocol):
    """Candidate generator plug-in: one method per Algorithm-level action."""

    def start(self, p_true: TruePopulation, model: SurrogateModel) -> SurrogatePopulation: ...

    def resample(self, model: SurrogateModel) -> SurrogatePopulation: ...

    def absorb(self, x_new: np.ndarray, p_true: TruePopulation, model: SurrogateModel) -> SurrogatePopulation: ...


class NSGA3Generator:
    def __init__(self, config: EvolveConfig, lower: np.ndarray, upper: np.ndarray, m: int,
                 seed: int | np.random.Generator):
        self.config = config
        self.lower = np.asarray(lower, dtype=np.float64)
        self.upper = np.asarray(upper, dtype=np.float64)
        self.d = len(self.lower)
        self.dirs = config.directions(m)
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.parents: SurrogatePopulation | None = None

    @property
    def pm_prob(self) -> float:
        return self.config.pm_prob if self.config.pm_prob is not None else 1.0 / self.d

    def propose(self, parents: SurrogatePopulation, model: SurrogateModel) -> SurrogatePopulation:
        """Breed ``pop_size`` offspring from ``parents`` and score them with ``model``."""
        cfg = self.config
        n_off = cfg.pop_size
        rank = nd_rank(parents.y)
        crowd = np.empty(len(parents))
        for front in nds(parents.y):
            crowd[front] = crowding_distance(parents.y[front])
        n_pairs = (n_off + 1) // 2
        sel = binary_tournament(rank, crowd, 2 * n_pairs, self.rng)
        p1, p2 = parents.x[sel[:n_pairs]], parents.x[sel[n_pairs:]]
        c1, c2 = sbx(p1, p2, cfg.sbx_eta, cfg.sbx_prob, self.rng, self.lower, self.upper)
        kids = np.vstack([c1, c2])[:n_off]
        kids = polynomial_mutation(kids, cfg.pm_eta, self.pm_prob, self.rng, self.lower, self.upper)
        return predict_batch(model, kids)

    def _survive(self, pool: SurrogatePopulation) -> SurrogatePopulation:
        k = min(self.config.pop_size, len(pool))
        return pool.subset(environmental_select(pool, k, self.dirs, self.rng))

    def start(self, p_true: TruePopulation, model: SurrogateModel) -> SurrogatePopulation:
        self.parents = self._survive(predict_batch(model, p_true.x))
        return self.resample(model)

    def resample(self, model: SurrogateModel) -> SurrogatePopulation:
        if self.parents is None:
            raise RuntimeError("generator not started")
        offspring = self.propose(self.parents, model)
        self.parents = self._survive(SurrogatePopulation.concat(self.parents, offspring))
        return offspring

    def absorb(self, x_new: np.ndarray, p_true: TruePopulation, model: SurrogateModel) -> SurrogatePopulation:
        """Rescore parents with a refitted model, add immigrants, breed fresh offspring."""
        pool = predict_batch(model, np.vstack([self.parents.x, np.atleast_2d(x_new)]))
        self.parents = self._survive(pool)
        return self.resample(model)


GENERATORS = {"nsga3": NSGA3Generator}


def make_generator(config: EvolveConfig, lower, upper, m: int, seed) -> Generator:
    try:
        cls = GENERATORS[config.generator]
    except KeyError:
        raise ValueError(f"unknown generator {config.generator!r}; available: {sorted(GENERATORS)}") from None
    return cls(config, lower, upper, m, seed)
