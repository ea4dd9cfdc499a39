"""Small numpy-backed tensor with a reverse-mode gradient tape.

Only what the landscape analyzer and the Q-network need is here: dense
float arrays (float64 unless a ``precision`` scope says otherwise),
broadcasting elementwise arithmetic, batched matmul, reductions, softmax,
layer norm, GELU/ReLU, a pre-LN single-head attention block, Adam, and a
JSON checkpoint format.
"""

from __future__ import annotations

import contextlib
import contextvars
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

FORMAT_VERSION = 1
LN_EPS = 1e-5
FFN_EXPANSION = 2

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)
_dtype: contextvars.ContextVar[type] = contextvars.ContextVar("dtype", default=np.float64)


class ShapeError(ValueError):
    pass


class EmptyPopulationError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable taping inside the block (forward-only evaluation)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Tensors created inside the block store ``dtype`` (float32 roughly halves training time)."""
    token = _dtype.set(np.dtype(dtype).type)
    try:
        yield
    finally:
        _dtype.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # sum out axes that broadcasting added or stretched
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=_dtype.get())
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- construction helpers -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        # grads are never mutated in place, so aliasing g is safe
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    # -- arithmetic -------------------------------------------------------------
    def __add__(self, other) -> Tensor:
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> Tensor:
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other) -> Tensor:
        return add(as_tensor(other), neg(self))

    def __mul__(self, other) -> Tensor:
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other) -> Tensor:
        return matmul(self, other)

    def __pow__(self, p: float) -> Tensor:
        return power(self, p)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return tmean(self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], fn: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    return out


# -- elementwise ------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), fn)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: a._accumulate(-g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), fn)


def power(a: Tensor, p: float) -> Tensor:
    out = a.data ** p
    return _make(out, (a,), lambda g: a._accumulate(g * p * a.data ** (p - 1.0)))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: a._accumulate(g * out))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: a._accumulate(g * (1.0 - out * out)))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: a._accumulate(g * mask))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)

    def fn(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        a._accumulate(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner))

    return _make(out, (a,), fn)


# -- shape ----------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(old)))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: a._accumulate(np.transpose(g, inv)))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def fn(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(part)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, fn)


def take_rows(a: Tensor, idx) -> Tensor:
    """Gather rows of the leading axis (repeats allowed)."""
    idx = np.asarray(idx, dtype=int)

    def fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _make(a.data[idx], (a,), fn)


# -- reductions -------------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(out, (a,), fn)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


# -- linear algebra -----------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    flat = b.ndim == 2
    q = a.shape[-1]
    if flat:
        # fold batch axes into rows: one GEMM instead of many tiny ones
        out = (a.data.reshape(-1, q) @ b.data).reshape(a.shape[:-1] + (b.shape[1],))
    else:
        try:
            out = np.matmul(a.data, b.data)
        except ValueError as exc:
            raise ShapeError(f"matmul batch dimensions not broadcastable: {a.shape} x {b.shape}") from exc

    def fn(g):
        if flat:
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                a._accumulate((g2 @ b.data.T).reshape(a.shape))
            if b.requires_grad:
                b._accumulate(a.data.reshape(-1, q).T @ g2)
            return
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(out, (a, b), fn)


# -- neural pieces ---------------------------------------------------------------------

def softmax(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax; ``mask`` (broadcastable bool, True = keep) zeroes keys."""
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        a._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (a,), fn)


def layernorm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize over the last axis then apply the affine map."""
    xd = x.data
    h = xd.shape[-1]
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * scale.data + shift.data

    def fn(g):
        if scale.requires_grad:
            scale._accumulate((g * xhat).reshape(-1, h).sum(axis=0))
        if shift.requires_grad:
            shift._accumulate(g.reshape(-1, h).sum(axis=0))
        if x.requires_grad:
            gx = g * scale.data
            x._accumulate(
                inv * (gx - gx.mean(axis=-1, keepdims=True)
                       - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            )

    return _make(out, (x, scale, shift), fn)


def huber(pred: Tensor, target: np.ndarray, delta: float = 1.0) -> Tensor:
    """Mean Huber loss of ``pred`` against a constant target."""
    diff = pred.data - target
    ad = np.abs(diff)
    quad = ad <= delta
    out = np.where(quad, 0.5 * diff * diff, delta * (ad - 0.5 * delta)).mean()
    n = diff.size

    def fn(g):
        pred._accumulate(g * np.where(quad, diff, delta * np.sign(diff)) / n)

    return _make(np.asarray(out), (pred,), fn)


# -- backward -----------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into every taped ancestor, then drop the tape."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        node._parents = ()
        node._backward = None


# -- parameters, attention ---------------------------------------------------------

Params = dict[str, Tensor]


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float = 1.0) -> np.ndarray:
    bound = gain * math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class AttnBlock:
    """Parameters of one pre-LN single-head Transformer block of width h."""

    h: int
    params: Params

    NAMES = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
             "ln1_g", "ln1_b", "ln2_g", "ln2_b", "w1", "b1", "w2", "b2")

    @classmethod
    def init(cls, h: int, rng: np.random.Generator) -> AttnBlock:
        f = FFN_EXPANSION * h
        p = {}
        for key in ("q", "k", "v", "o"):
            p["w" + key] = init_linear(rng, h, h)
            p["b" + key] = np.zeros(h)
        p["ln1_g"], p["ln1_b"] = np.ones(h), np.zeros(h)
        p["ln2_g"], p["ln2_b"] = np.ones(h), np.zeros(h)
        p["w1"], p["b1"] = init_linear(rng, h, f), np.zeros(f)
        p["w2"], p["b2"] = init_linear(rng, f, h), np.zeros(h)
        return cls(h, {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()})

    @staticmethod
    def param_count(h: int) -> int:
        return 8 * h * h + 11 * h

    def __getitem__(self, key: str) -> Tensor:
        return self.params[key]


def attention(x: Tensor, block: AttnBlock, mask: np.ndarray | None = None,
              return_weights: bool = False):
    """Pre-LN residual block over the token axis of ``x`` [b, n, h].

    ``mask`` is a bool array [b, n] marking valid tokens; padded tokens are
    never attended to.
    """
    b, n, h = x.shape
    if n == 0:
        raise EmptyPopulationError("attention over an empty token axis")
    if h != block.h:
        raise ShapeError(f"attention width {h} does not match block width {block.h}")
    p = block.params
    xn = layernorm(x, p["ln1_g"], p["ln1_b"])
    q = xn @ p["wq"] + p["bq"]
    k = xn @ p["wk"] + p["bk"]
    v = xn @ p["wv"] + p["bv"]
    scores = (q @ transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(h))
    key_mask = None if mask is None else mask[:, None, :]
    weights = softmax(scores, axis=-1, mask=key_mask)
    y = x + ((weights @ v) @ p["wo"] + p["bo"])
    yn = layernorm(y, p["ln2_g"], p["ln2_b"])
    out = y + (gelu(yn @ p["w1"] + p["b1"]) @ p["w2"] + p["b2"])
    if return_weights:
        return out, weights.data
    return out


# -- optimizer -----------------------------------------------------------------------

class Adam:
    def __init__(self, params: Iterable[Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    params = [p for p in params if p.grad is not None]
    total = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad = p.grad * scale
    return total


# -- checkpoints ------------------------------------------------------------------------

def params_to_json(params: Params, h: int, extra: dict | None = None) -> dict:
    doc = {"format_version": FORMAT_VERSION, "h": h}
    if extra:
        doc.update(extra)
    doc["params"] = {
        name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
        for name, t in params.items()
    }
    return doc


def params_from_json(doc: dict) -> tuple[int, Params]:
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {doc.get('format_version')!r}")
    out = {}
    for name, entry in doc["params"].items():
        shape = tuple(entry["shape"])
        data = np.asarray(entry["data"], dtype=np.float64)
        if int(np.prod(shape)) != data.size:
            raise CheckpointError(f"parameter {name}: shape {shape} does not match {data.size} values")
        out[name] = Tensor(data.reshape(shape), requires_grad=True, name=name)
    return int(doc["h"]), out


def save_params(path: str | Path, params: Params, h: int, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(params_to_json(params, h, extra)))


def load_params(path: str | Path) -> tuple[int, Params, dict]:
    doc = json.loads(Path(path).read_text())
    h, params = params_from_json(doc)
    meta = {k: v for k, v in doc.items() if k != "params"}
    return h, params, meta
