"""Pareto utilities: dominance, non-dominated sorting, exact hypervolume,
Das-Dennis directions, PBI and the Manhattan front distance used by the reward.

Minimization throughout. ``p`` dominates ``q`` iff ``p <= q`` componentwise
and ``p != q``; equal points never dominate each other.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

REF_NORMALIZED = 1.1
REF_GUARD = 1e-9


def dominates(p, q) -> bool:
    p, q = np.asarray(p), np.asarray(q)
    return bool(np.all(p <= q) and np.any(p < q))


def dominance_matrix(Y: np.ndarray) -> np.ndarray:
    """``D[i, j]`` is True when row i dominates row j."""
    Y = np.asarray(Y, dtype=np.float64)
    le = np.all(Y[:, None, :] <= Y[None, :, :], axis=2)
    lt = np.any(Y[:, None, :] < Y[None, :, :], axis=2)
    return le & lt


def nds(points) -> list[list[int]]:
    """Fast non-dominated sort; returns fronts as lists of row indices."""
    Y = np.asarray(points, dtype=np.float64)
    if Y.size == 0:
        return []
    Y = Y.reshape(len(Y), -1)
    D = dominance_matrix(Y)
    counts = D.sum(axis=0)
    fronts = []
    current = np.flatnonzero(counts == 0)
    while current.size:
        fronts.append(current.tolist())
        counts = counts - D[current].sum(axis=0)
        counts[current] = -1
        current = np.flatnonzero(counts == 0)
    return fronts


def nondominated(points) -> np.ndarray:
    """Indices of the first front, in ascending order."""
    fronts = nds(points)
    return np.array(sorted(fronts[0]) if fronts else [], dtype=int)


def nd_rank(points) -> np.ndarray:
    Y = np.asarray(points)
    rank = np.empty(len(Y), dtype=int)
    for r, front in enumerate(nds(Y)):
        rank[front] = r
    return rank


def crowding_distance(Y: np.ndarray) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    n, m = Y.shape
    if n <= 2:
        return np.full(n, np.inf)
    cd = np.zeros(n)
    for j in range(m):
        order = np.argsort(Y[:, j], kind="stable")
        span = Y[order[-1], j] - Y[order[0], j]
        cd[order[0]] = cd[order[-1]] = np.inf
        if span > 0:
            cd[order[1:-1]] += (Y[order[2:], j] - Y[order[:-2], j]) / span
    return cd


# -- hypervolume -------------------------------------------------------------------------

def _hv2d_staircase(P: np.ndarray, ref: np.ndarray) -> float:
    P = P[np.lexsort((P[:, 1], P[:, 0]))]
    hv = 0.0
    best_f2 = ref[1]
    for x, y in P:
        if y < best_f2:
            hv += (ref[0] - x) * (best_f2 - y)
            best_f2 = y
    return hv


def hypervolume(front, ref) -> float:
    """Exact dominated hypervolume for m in {2, 3}; non-contributing points are ignored."""
    ref = np.asarray(ref, dtype=np.float64)
    P = np.asarray(front, dtype=np.float64)
    if P.size == 0:
        return 0.0
    P = P.reshape(-1, ref.size)
    m = ref.size
    if m not in (2, 3):
        raise ValueError(f"hypervolume supports m in {{2, 3}}, got {m}")
    P = P[np.all(P < ref, axis=1)]
    if len(P) == 0:
        return 0.0
    if m == 2:
        return _hv2d_staircase(P, ref)
    # slice along f3: between consecutive f3 levels the cross-section is a 2D HV
    P = P[np.argsort(P[:, 2], kind="stable")]
    z = np.append(P[:, 2], ref[2])
    hv = 0.0
    for i in range(len(P)):
        depth = z[i + 1] - z[i]
        if depth > 0:
            hv += depth * _hv2d_staircase(P[: i + 1, :2], ref[:2])
    return hv


def normalize(Y: np.ndarray, ideal: np.ndarray, nadir: np.ndarray) -> np.ndarray:
    span = np.where(nadir - ideal > 0, nadir - ideal, 1.0)
    return (np.asarray(Y, dtype=np.float64) - ideal) / span


def run_reference(Y_init: np.ndarray, ideal: np.ndarray, nadir: np.ndarray,
                  ref_value: float = REF_NORMALIZED) -> np.ndarray:
    """Normalized reference point for one run: 1.1 or 1.1x the worst initial-design value."""
    Z = normalize(Y_init, ideal, nadir)
    return np.maximum(ref_value, ref_value * Z.max(axis=0))


def normalized_hv(Y: np.ndarray, ideal: np.ndarray, nadir: np.ndarray,
                  ref=REF_NORMALIZED) -> float:
    Z = normalize(Y, ideal, nadir)
    ref = np.broadcast_to(np.asarray(ref, dtype=np.float64), (Z.shape[1],))
    return hypervolume(Z, ref)


# -- reference directions & scalarization ------------------------------------------------

@dataclass(frozen=True)
class ReferenceDirectionSet:
    dirs: np.ndarray
    H: int

    def __len__(self) -> int:
        return len(self.dirs)


def das_dennis(m: int, H: int) -> ReferenceDirectionSet:
    """All simplex-lattice weight vectors with denominator H (stars and bars)."""
    if H < 1:
        raise ValueError("Das-Dennis needs H >= 1")
    rows = []
    for bars in combinations(range(H + m - 1), m - 1):
        cuts = (-1,) + bars + (H + m - 1,)
        rows.append([cuts[i + 1] - cuts[i] - 1 for i in range(m)])
    dirs = np.array(rows, dtype=np.float64) / H
    # ascending lexicographic order on the first coordinate
    dirs = dirs[np.lexsort(dirs.T[::-1])]
    assert len(dirs) == comb(H + m - 1, m - 1)
    return ReferenceDirectionSet(dirs, H)


def default_divisions(m: int, minimum: int = 20) -> int:
    H = 1
    while comb(H + m - 1, m - 1) < minimum:
        H += 1
    return H


def pbi(f, w, theta: float, ideal) -> float:
    f, w, ideal = (np.asarray(v, dtype=np.float64) for v in (f, w, ideal))
    norm = np.linalg.norm(w)
    if norm <= 0:
        raise ValueError("PBI direction must be non-zero")
    u = w / norm
    diff = f - ideal
    d1 = float(diff @ u)
    d2 = float(np.linalg.norm(diff - d1 * u))
    return d1 + theta * d2


def pbi_matrix(F: np.ndarray, W: np.ndarray, theta: float, ideal: np.ndarray) -> np.ndarray:
    """PBI of every row of F along every row of W -> [len(F), len(W)]."""
    U = W / np.linalg.norm(W, axis=1, keepdims=True)
    diff = np.asarray(F, dtype=np.float64) - ideal
    d1 = diff @ U.T
    d2 = np.linalg.norm(diff[:, None, :] - d1[:, :, None] * U[None, :, :], axis=2)
    return d1 + theta * d2


def perpendicular_distance(F: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Distance from each point to each direction ray through the origin -> [len(F), len(W)]."""
    U = W / np.linalg.norm(W, axis=1, keepdims=True)
    F = np.asarray(F, dtype=np.float64)
    proj = F @ U.T
    return np.linalg.norm(F[:, None, :] - proj[:, :, None] * U[None, :, :], axis=2)


def manhattan_front_distance(y_new, front) -> tuple[float, float]:
    """(d_i, d_ref): L1 distance to the closest front point and that point's L1 norm.

    Ties go to the lowest index.
    """
    front = np.asarray(front, dtype=np.float64)
    if front.size == 0:
        raise ValueError("front must be non-empty")
    front = front.reshape(len(front), -1)
    dist = np.abs(front - np.asarray(y_new, dtype=np.float64)).sum(axis=1)
    j = int(np.argmin(dist))
    return float(dist[j]), float(np.abs(front[j]).sum())
