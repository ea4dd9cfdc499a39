"""Bi-space attention landscape analyzer.

Maps the true archive and the surrogate-scored candidate set to a fixed
width vector, independent of d, m and the population sizes:

    pie         min-max normalize, lay out as [m, d, n, c], embed to width h
    stage_one   attention across individuals, then across dimensions (with
                sinusoidal positions), mean over dimensions -> [m, n, h]
    stage_two   attention across individuals, then across objectives,
                mean over individuals and objectives -> [h]

Each space has its own embedding and its own four attention blocks. All
functions carry a leading batch axis so the trainer can push a mini-batch of
snapshots through in one pass; populations of unequal size are padded and
masked.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .surrogate import SurrogatePopulation, TruePopulation
from .tensor import AttnBlock, EmptyPopulationError, Params, Tensor, attention, concat, init_linear

DEGENERATE = 0.5


class ELAMode(str, enum.Enum):
    BI = "bi"
    TRUE_ONLY = "true_only"
    SUR_ONLY = "sur_only"


def minmax(v: np.ndarray, axis: int = 0) -> np.ndarray:
    """Scale to [0, 1] along ``axis``; a channel with zero range maps to 0.5."""
    lo = v.min(axis=axis, keepdims=True)
    hi = v.max(axis=axis, keepdims=True)
    span = hi - lo
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (v - lo) / np.where(span > 0, span, 1.0)
    return np.where(span > 0, out, DEGENERATE)


def positional_encoding(length: int, h: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(h)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / h)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass
class PieTensors:
    M_true: np.ndarray  # [m, d, n_true, 2]
    M_sur: np.ndarray  # [m, d, n_sur, 3]
    E_true: Tensor | None = None
    E_sur: Tensor | None = None


def pie_arrays(x_true, y_true, x_sur, y_sur, s_sur, lower, upper) -> tuple[np.ndarray, np.ndarray]:
    """Normalized observation layouts [m, d, n, 2] and [m, d, n, 3]."""
    if len(x_true) == 0 or len(x_sur) == 0:
        raise EmptyPopulationError("both populations must be non-empty")
    lower = np.asarray(lower, dtype=np.float64)
    span = np.asarray(upper, dtype=np.float64) - lower
    xt = (np.asarray(x_true) - lower) / span  # [n, d]
    xs = (np.asarray(x_sur) - lower) / span
    yt = minmax(np.asarray(y_true, dtype=np.float64))  # [n, m]
    ys = minmax(np.asarray(y_sur, dtype=np.float64))
    ss = minmax(np.asarray(s_sur, dtype=np.float64))
    m, d = yt.shape[1], xt.shape[1]
    Mt = np.empty((m, d, len(xt), 2))
    Mt[..., 0] = xt.T[None, :, :]
    Mt[..., 1] = yt.T[:, None, :]
    Ms = np.empty((m, d, len(xs), 3))
    Ms[..., 0] = xs.T[None, :, :]
    Ms[..., 1] = ys.T[:, None, :]
    Ms[..., 2] = ss.T[:, None, :]
    return Mt, Ms


def stage_one(E: Tensor, ind: AttnBlock, dim: AttnBlock, mask: np.ndarray | None = None,
              with_posenc: bool = True) -> Tensor:
    """[B, m, d, n, h] -> [B, m, n, h] (a 4-d input is treated as B = 1 and squeezed)."""
    squeeze = E.ndim == 4
    if squeeze:
        E = E.reshape((1,) + E.shape)
    B, m, d, n, h = E.shape
    if mask is None:
        mask = np.ones((B, n), dtype=bool)
    tok_mask = np.broadcast_to(mask[:, None, None, :], (B, m, d, n)).reshape(B * m * d, n)
    X = attention(E.reshape(B * m * d, n, h), ind, tok_mask)
    X = X.reshape(B, m, d, n, h).transpose(0, 1, 3, 2, 4)
    if with_posenc:
        X = X + positional_encoding(d, h)
    X = attention(X.reshape(B * m * n, d, h), dim)
    S = X.reshape(B, m, n, d, h).mean(axis=3)
    return S.reshape(m, n, h) if squeeze else S


def stage_two(S: Tensor, ind: AttnBlock, obj: AttnBlock, mask: np.ndarray | None = None) -> Tensor:
    """[B, m, n, h] -> [B, h] (a 3-d input is treated as B = 1 and squeezed)."""
    squeeze = S.ndim == 3
    if squeeze:
        S = S.reshape((1,) + S.shape)
    B, m, n, h = S.shape
    if mask is None:
        mask = np.ones((B, n), dtype=bool)
    tok_mask = np.broadcast_to(mask[:, None, :], (B, m, n)).reshape(B * m, n)
    X = attention(S.reshape(B * m, n, h), ind, tok_mask)
    X = X.reshape(B, m, n, h).transpose(0, 2, 1, 3)
    X = attention(X.reshape(B * n, m, h), obj).reshape(B, n, m, h)
    weights = mask.astype(np.float64)[:, :, None, None] / (mask.sum(axis=1) * m)[:, None, None, None]
    out = (X * weights).sum(axis=(1, 2))
    return out.reshape(h) if squeeze else out


@dataclass
class Snapshot:
    """Raw populations at one decision point; the state is recomputed from these."""

    x_true: np.ndarray
    y_true: np.ndarray
    x_sur: np.ndarray
    y_sur: np.ndarray
    s_sur: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    rho: float

    @property
    def key(self) -> tuple[int, int]:
        return self.y_true.shape[1], self.x_true.shape[1]

    @classmethod
    def of(cls, p_true: TruePopulation, p_sur: SurrogatePopulation, lower, upper, rho: float) -> Snapshot:
        return cls(p_true.x, p_true.y, p_sur.x, p_sur.y, p_sur.sigma,
                   np.asarray(lower), np.asarray(upper), float(rho))


class ELA:
    """Parameter container and forward pass of the analyzer."""

    SPACES = ("true", "sur")
    BLOCKS = ("s1_ind", "s1_dim", "s2_ind", "s2_obj")

    def __init__(self, h: int = 16, mode: ELAMode | str = ELAMode.BI, seed: int = 0,
                 params: Params | None = None):
        self.h = h
        self.mode = ELAMode(mode)
        if params is None:
            rng = np.random.default_rng(seed)
            params = {}
            for space, width in (("true", 2), ("sur", 3)):
                params[f"ela.{space}.emb"] = Tensor(init_linear(rng, width, h), requires_grad=True)
                for blk in self.BLOCKS:
                    for k, t in AttnBlock.init(h, rng).params.items():
                        params[f"ela.{space}.{blk}.{k}"] = t
        self.params = params
        self.blocks = {
            (space, blk): AttnBlock(h, {k: params[f"ela.{space}.{blk}.{k}"] for k in AttnBlock.NAMES})
            for space in self.SPACES for blk in self.BLOCKS
        }

    @property
    def out_dim(self) -> int:
        return 2 * self.h if self.mode == ELAMode.BI else self.h

    @property
    def spaces(self) -> tuple[str, ...]:
        if self.mode == ELAMode.TRUE_ONLY:
            return ("true",)
        if self.mode == ELAMode.SUR_ONLY:
            return ("sur",)
        return self.SPACES

    def embed(self, M: np.ndarray, space: str) -> Tensor:
        return Tensor(M) @ self.params[f"ela.{space}.emb"]

    def encode_space(self, M: np.ndarray, mask: np.ndarray, space: str) -> Tensor:
        E = self.embed(M, space)
        S = stage_one(E, self.blocks[space, "s1_ind"], self.blocks[space, "s1_dim"], mask)
        return stage_two(S, self.blocks[space, "s2_ind"], self.blocks[space, "s2_obj"], mask)

    def pie(self, p_true: TruePopulation, p_sur: SurrogatePopulation, lower, upper) -> PieTensors:
        Mt, Ms = pie_arrays(p_true.x, p_true.y, p_sur.x, p_sur.y, p_sur.sigma, lower, upper)
        return PieTensors(Mt, Ms, self.embed(Mt, "true"), self.embed(Ms, "sur"))

    def forward_batch(self, snaps: Sequence[Snapshot]) -> Tensor:
        """[B, out_dim] for snapshots sharing (m, d); populations are padded and masked."""
        layouts = [pie_arrays(s.x_true, s.y_true, s.x_sur, s.y_sur, s.s_sur, s.lower, s.upper)
                   for s in snaps]
        parts = []
        for space, col in (("true", 0), ("sur", 1)):
            if space not in self.spaces:
                continue
            arrays = [lay[col] for lay in layouts]
            M, mask = _pad_stack(arrays)
            parts.append(self.encode_space(M, mask, space))
        return parts[0] if len(parts) == 1 else concat(parts, axis=-1)

    def forward(self, p_true: TruePopulation, p_sur: SurrogatePopulation, lower, upper) -> Tensor:
        snap = Snapshot.of(p_true, p_sur, lower, upper, 0.0)
        return self.forward_batch([snap]).reshape(self.out_dim)


def _pad_stack(arrays: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    n_max = max(a.shape[2] for a in arrays)
    m, d, _, c = arrays[0].shape
    M = np.zeros((len(arrays), m, d, n_max, c))
    mask = np.zeros((len(arrays), n_max), dtype=bool)
    for i, a in enumerate(arrays):
        M[i, :, :, : a.shape[2]] = a
        mask[i, : a.shape[2]] = True
    return M, mask
