"""The five infill criteria and elite selection.

Each criterion scores a batch of surrogate-predicted candidates:

* ``ND_A`` - angle-based diversity among surrogate non-dominated candidates.
* ``ND_DPBI_CONV`` / ``ND_DPBI_DIV`` - PBI improvement over the archive along
  each candidate's reference direction, small penalty (convergence) or large
  penalty restricted to poorly covered directions (diversity).
* ``EPDI_EXPLORE`` / ``EPDI_EXPLOIT`` - Gaussian expected improvement of the
  signed Manhattan distance to the current front, with inflated or deflated
  uncertainty.

All geometry is computed after normalizing objectives by the ideal and nadir
of the true archive.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .pareto import (ReferenceDirectionSet, dominates, nondominated, pbi_matrix,
                     perpendicular_distance)
from .surrogate import SurrogatePopulation, TruePopulation

log = logging.getLogger(__name__)


class CriterionId(enum.IntEnum):
    ND_A = 0
    ND_DPBI_CONV = 1
    ND_DPBI_DIV = 2
    EPDI_EXPLORE = 3
    EPDI_EXPLOIT = 4


@dataclass
class InfillConfig:
    theta_conv: float = 1.0
    theta_div: float = 10.0
    sigma_explore: float = 2.0
    sigma_exploit: float = 0.5


def _archive_scale(p_true: TruePopulation) -> tuple[np.ndarray, np.ndarray]:
    ideal = p_true.y.min(axis=0)
    span = p_true.y.max(axis=0) - ideal
    return ideal, np.where(span > 0, span, 1.0)


def _nd_candidates(p_sur: SurrogatePopulation) -> np.ndarray:
    idx = nondominated(p_sur.y)
    if idx.size == 0:
        log.info("empty surrogate non-dominated set; falling back to the whole population")
        return np.arange(len(p_sur))
    return idx


def _top_k(cand: np.ndarray, scores: np.ndarray, k: int, n: int) -> np.ndarray:
    """Highest scores first; ties resolved toward the lowest index. Pads from the rest."""
    order = cand[np.lexsort((cand, -scores))]
    picked = list(order[:k])
    if len(picked) < k:
        rest = [i for i in range(n) if i not in set(picked)]
        picked.extend(rest[: k - len(picked)])
    return np.array(picked, dtype=int)


def nd_angle_scores(p_sur: SurrogatePopulation, p_true: TruePopulation, cand: np.ndarray) -> np.ndarray:
    ideal, span = _archive_scale(p_true)
    C = (p_sur.y[cand] - ideal) / span
    T = (p_true.y - ideal) / span
    Cn = C / np.maximum(np.linalg.norm(C, axis=1, keepdims=True), 1e-12)
    Tn = T / np.maximum(np.linalg.norm(T, axis=1, keepdims=True), 1e-12)
    cos = np.clip(Cn @ Tn.T, -1.0, 1.0)
    return np.arccos(cos).min(axis=1)


def dpbi_scores(p_sur: SurrogatePopulation, p_true: TruePopulation, cand: np.ndarray,
                dirs: ReferenceDirectionSet, theta: float) -> np.ndarray:
    ideal, span = _archive_scale(p_true)
    C = (p_sur.y[cand] - ideal) / span
    T = (p_true.y - ideal) / span
    zero = np.zeros(C.shape[1])
    assoc = perpendicular_distance(C, dirs.dirs).argmin(axis=1)
    best_true = pbi_matrix(T, dirs.dirs, theta, zero).min(axis=0)
    cand_pbi = pbi_matrix(C, dirs.dirs, theta, zero)[np.arange(len(cand)), assoc]
    return best_true[assoc] - cand_pbi


def _poorly_covered(p_true: TruePopulation, cand: np.ndarray, p_sur: SurrogatePopulation,
                    dirs: ReferenceDirectionSet) -> np.ndarray:
    ideal, span = _archive_scale(p_true)
    front = p_true.y[nondominated(p_true.y)]
    cover = np.bincount(perpendicular_distance((front - ideal) / span, dirs.dirs).argmin(axis=1),
                        minlength=len(dirs))
    C = (p_sur.y[cand] - ideal) / span
    assoc = perpendicular_distance(C, dirs.dirs).argmin(axis=1)
    # smallest coverage among directions that actually own a candidate
    level = cover[assoc].min()
    keep = cand[cover[assoc] == level]
    return keep


def signed_front_distance(y: np.ndarray, front: np.ndarray) -> float:
    """L1 distance to the nearest front point, negative when y dominates that point."""
    dist = np.abs(front - y).sum(axis=1)
    j = int(np.argmin(dist))
    return -float(dist[j]) if dominates(y, front[j]) else float(dist[j])


def expected_improvement(mu, sigma, best: float = 0.0):
    """Closed-form EI for minimization of a Gaussian with mean ``mu`` and std ``sigma``."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    gain = best - mu
    with np.errstate(divide="ignore", invalid="ignore"):
        z = gain / sigma
        ei = gain * norm.cdf(z) + sigma * norm.pdf(z)
    return np.where(sigma > 0, ei, np.maximum(gain, 0.0))


def epdi_scores(p_sur: SurrogatePopulation, p_true: TruePopulation, cand: np.ndarray,
                sigma_mult: float) -> np.ndarray:
    ideal, span = _archive_scale(p_true)
    front = (p_true.y[nondominated(p_true.y)] - ideal) / span
    Y = (p_sur.y[cand] - ideal) / span
    S = p_sur.sigma[cand] / span
    mu = np.array([signed_front_distance(y, front) for y in Y])
    return expected_improvement(mu, sigma_mult * S.sum(axis=1), 0.0)


def select_elite(criterion: CriterionId, p_sur: SurrogatePopulation, p_true: TruePopulation,
                 dirs: ReferenceDirectionSet, k: int = 1, config: InfillConfig | None = None) -> np.ndarray:
    """Indices (into ``p_sur``) of the k candidates chosen for true evaluation."""
    cfg = config or InfillConfig()
    n = len(p_sur)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= {n}, got k={k}")
    criterion = CriterionId(criterion)
    if criterion == CriterionId.ND_A:
        cand = _nd_candidates(p_sur)
        scores = nd_angle_scores(p_sur, p_true, cand)
    elif criterion == CriterionId.ND_DPBI_CONV:
        cand = _nd_candidates(p_sur)
        scores = dpbi_scores(p_sur, p_true, cand, dirs, cfg.theta_conv)
    elif criterion == CriterionId.ND_DPBI_DIV:
        cand = _poorly_covered(p_true, _nd_candidates(p_sur), p_sur, dirs)
        scores = dpbi_scores(p_sur, p_true, cand, dirs, cfg.theta_div)
    else:
        mult = cfg.sigma_explore if criterion == CriterionId.EPDI_EXPLORE else cfg.sigma_exploit
        cand = np.arange(n)
        scores = epdi_scores(p_sur, p_true, cand, mult)
    return _top_k(cand, scores, k, n)
