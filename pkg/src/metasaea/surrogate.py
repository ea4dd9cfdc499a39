"""Per-objective binned probabilistic surrogates.

Every backend returns, for each objective, a discrete distribution over K
value bins; the scalar prediction and its uncertainty are the mean and std
of that distribution taken at the bin midpoints.

``ensemble`` is a bootstrap ensemble of ridge regressors on random Fourier
features whose member predictions are histogrammed into the bins.
``gp`` is an exact squared-exponential GP whose Gaussian posterior is
integrated over the bins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import pdist
from scipy.special import ndtr

ENSEMBLE = "ensemble"
GP = "gp"
BACKENDS = (ENSEMBLE, GP)


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class BinnedPrediction:
    edges: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        if len(self.edges) != len(self.probs) + 1:
            raise ValueError("need K+1 edges for K probabilities")
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("bin edges must be strictly ascending")


def moments(pred: BinnedPrediction) -> tuple[float, float]:
    mids = 0.5 * (pred.edges[:-1] + pred.edges[1:])
    mean = float(pred.probs @ mids)
    var = float(pred.probs @ (mids - mean) ** 2)
    return mean, float(np.sqrt(max(var, 0.0)))


def _moments_rows(edges: np.ndarray, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mids = 0.5 * (edges[:-1] + edges[1:])
    mean = P @ mids
    var = (P * (mids[None, :] - mean[:, None]) ** 2).sum(axis=1)
    return mean, np.sqrt(np.maximum(var, 0.0))


@dataclass(frozen=True)
class TruePopulation:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    def append(self, x: np.ndarray, y: np.ndarray) -> TruePopulation:
        return TruePopulation(np.vstack([self.x, x]), np.vstack([self.y, y]))


@dataclass(frozen=True)
class SurrogatePopulation:
    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    def subset(self, idx) -> SurrogatePopulation:
        idx = np.asarray(idx, dtype=int)
        return SurrogatePopulation(self.x[idx], self.y[idx], self.sigma[idx])

    @staticmethod
    def concat(a: SurrogatePopulation, b: SurrogatePopulation) -> SurrogatePopulation:
        return SurrogatePopulation(np.vstack([a.x, b.x]), np.vstack([a.y, b.y]),
                                   np.vstack([a.sigma, b.sigma]))


@dataclass
class SurrogateConfig:
    backend: str = ENSEMBLE
    K: int = 32
    members: int = 16
    features: int = 200
    ridge: float = 1e-3
    gp_noise: float = 1e-6
    seed: int = 0


def bin_edges(y: np.ndarray, K: int) -> np.ndarray:
    lo, hi = float(np.min(y)), float(np.max(y))
    span = hi - lo
    pad = 0.1 * span if span > 0 else 1.0
    return np.linspace(lo - pad, hi + pad, K + 1)


class _Scaler:
    def __init__(self, lower: np.ndarray, upper: np.ndarray):
        self.lower = lower
        self.span = np.where(upper - lower > 0, upper - lower, 1.0)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return (X - self.lower) / self.span


def _median_lengthscale(Xs: np.ndarray) -> float:
    dist = pdist(Xs)
    med = float(np.median(dist)) if dist.size else 0.0
    return med if med > 0 else 1.0


class _RFFEnsemble:
    """Bootstrap ridge members on independently drawn RBF Fourier features."""

    def __init__(self, Xs, y, cfg: SurrogateConfig, rng: np.random.Generator):
        n, d = Xs.shape
        self.y_mu = float(y.mean())
        sd = float(y.std())
        self.y_sd = sd if sd > 0 else 1.0
        t = (y - self.y_mu) / self.y_sd
        ell = _median_lengthscale(Xs)
        D = cfg.features
        self.omega = rng.normal(0.0, 1.0 / ell, size=(cfg.members, d, D))
        self.phase = rng.uniform(0.0, 2 * np.pi, size=(cfg.members, 1, D))
        self.coef = np.empty((cfg.members, D))
        self.scale = np.sqrt(2.0 / D)
        for b in range(cfg.members):
            rows = rng.integers(0, n, size=n)
            Phi = self._features(Xs[rows], b)
            # dual ridge solve: n <= D always holds for the budgets used here
            G = Phi @ Phi.T + cfg.ridge * np.eye(n)
            self.coef[b] = Phi.T @ np.linalg.solve(G, t[rows])

    def _features(self, Xs, b):
        return self.scale * np.cos(Xs @ self.omega[b] + self.phase[b])

    def members(self, Xs: np.ndarray) -> np.ndarray:
        """Member predictions [B, q] in objective units."""
        Phi = self.scale * np.cos(np.matmul(Xs, self.omega) + self.phase)  # [B, q, D]
        return np.matmul(Phi, self.coef[:, :, None])[:, :, 0] * self.y_sd + self.y_mu


class _ExactGP:
    def __init__(self, Xs, y, noise: float):
        self.X = Xs
        self.y_mu = float(y.mean())
        sd = float(y.std())
        self.y_sd = sd if sd > 0 else 1.0
        self.noise = noise
        self.ell = _median_lengthscale(Xs)
        t = (y - self.y_mu) / self.y_sd
        K = self.kernel(Xs, Xs) + noise * np.eye(len(Xs))
        jitter = 0.0
        for _ in range(6):
            try:
                self.chol = cho_factor(K + jitter * np.eye(len(Xs)), lower=True)
                break
            except np.linalg.LinAlgError:
                jitter = 1e-10 if jitter == 0.0 else jitter * 10
        else:
            raise np.linalg.LinAlgError("GP covariance is not positive definite")
        self.alpha = cho_solve(self.chol, t)

    def kernel(self, A, B):
        sq = (A**2).sum(1)[:, None] + (B**2).sum(1)[None, :] - 2.0 * A @ B.T
        return np.exp(-0.5 * np.maximum(sq, 0.0) / self.ell**2)

    def posterior_standardized(self, Xs):
        Ks = self.kernel(Xs, self.X)
        mean = Ks @ self.alpha
        v = cho_solve(self.chol, Ks.T)
        var = np.maximum(1.0 - (Ks * v.T).sum(axis=1), 0.0)
        return mean, var

    def posterior(self, Xs):
        mean, var = self.posterior_standardized(Xs)
        return mean * self.y_sd + self.y_mu, np.sqrt(var) * self.y_sd


@dataclass
class SurrogateModel:
    backend: str
    K: int
    edges: list[np.ndarray]
    scaler: _Scaler
    models: list = field(repr=False)
    alpha: float = 0.0

    @property
    def m(self) -> int:
        return len(self.models)

    def probs(self, X: np.ndarray) -> list[np.ndarray]:
        """Per objective, a [q, K] matrix of bin probabilities."""
        Xs = self.scaler(np.atleast_2d(X))
        out = []
        for edges, model in zip(self.edges, self.models):
            if self.backend == ENSEMBLE:
                preds = model.members(Xs)  # [B, q]
                B, q = preds.shape
                bins = np.clip(np.searchsorted(edges, preds, side="right") - 1, 0, self.K - 1)
                flat = (np.arange(q)[None, :] * self.K + bins).ravel()
                counts = np.bincount(flat, minlength=q * self.K).reshape(q, self.K).astype(np.float64)
                P = (counts + self.alpha) / (B + self.K * self.alpha)
            else:
                mean, sd = model.posterior(Xs)
                cdf = _gauss_cdf(edges[None, :], mean[:, None], sd[:, None])
                P = np.diff(cdf, axis=1)
                # fold the tails into the outermost bins
                P[:, 0] += cdf[:, 0]
                P[:, -1] += 1.0 - cdf[:, -1]
                P = np.clip(P, 0.0, None)
                P /= P.sum(axis=1, keepdims=True)
            out.append(P)
        return out

    def gaussian(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Raw GP posterior mean/std [q, m] before binning (GP backend only)."""
        if self.backend != GP:
            raise ValueError("raw Gaussian posterior only exists for the GP backend")
        Xs = self.scaler(np.atleast_2d(X))
        cols = [model.posterior(Xs) for model in self.models]
        return np.column_stack([c[0] for c in cols]), np.column_stack([c[1] for c in cols])


def _gauss_cdf(x, mean, sd):
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (x - mean) / sd
    step = (x >= mean).astype(np.float64)
    return np.where(sd > 0, ndtr(z), step)


def fit(train_x: np.ndarray, train_y: np.ndarray, config: SurrogateConfig | None = None,
        bounds: tuple[np.ndarray, np.ndarray] | None = None) -> SurrogateModel:
    """Fit one independent model per objective column of ``train_y``."""
    cfg = config or SurrogateConfig()
    X = np.atleast_2d(np.asarray(train_x, dtype=np.float64))
    Y = np.asarray(train_y, dtype=np.float64).reshape(len(X), -1)
    if len(X) < 2:
        raise InsufficientDataError(f"surrogate fit needs at least 2 samples, got {len(X)}")
    if cfg.backend not in BACKENDS:
        raise ValueError(f"unknown surrogate backend {cfg.backend!r}")
    lower, upper = bounds if bounds is not None else (X.min(axis=0), X.max(axis=0))
    scaler = _Scaler(np.asarray(lower, dtype=np.float64), np.asarray(upper, dtype=np.float64))
    Xs = scaler(X)
    rng = np.random.default_rng(cfg.seed)
    models = []
    for j in range(Y.shape[1]):
        if cfg.backend == ENSEMBLE:
            models.append(_RFFEnsemble(Xs, Y[:, j], cfg, rng))
        else:
            models.append(_ExactGP(Xs, Y[:, j], cfg.gp_noise))
    edges = [bin_edges(Y[:, j], cfg.K) for j in range(Y.shape[1])]
    return SurrogateModel(cfg.backend, cfg.K, edges, scaler, models, alpha=0.5 / cfg.K)


def predict(model: SurrogateModel, x: np.ndarray) -> list[BinnedPrediction]:
    probs = model.probs(np.asarray(x, dtype=np.float64)[None, :])
    return [BinnedPrediction(e, P[0]) for e, P in zip(model.edges, probs)]


def predict_batch(model: SurrogateModel, X: np.ndarray) -> SurrogatePopulation:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    means, stds = [], []
    for e, P in zip(model.edges, model.probs(X)):
        mu, sd = _moments_rows(e, P)
        means.append(mu)
        stds.append(sd)
    return SurrogatePopulation(X.copy(), np.column_stack(means), np.column_stack(stds))
