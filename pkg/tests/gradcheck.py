"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np

from metasaea.tensor import Tensor

STEP = 1e-5
# central differences at STEP carry ~1e-10 of truncation/round-off noise; an entry whose
# true gradient vanishes (e.g. the attention key bias) can only be judged in absolute terms
ABS_FLOOR = 1e-9


def numeric_grad(f, t: Tensor, step: float = STEP, coords=None) -> np.ndarray:
    """d f() / d t.data by central differences; ``coords`` limits which entries are probed."""
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        old = flat[i]
        flat[i] = old + step
        hi = float(f())
        flat[i] = old - step
        lo = float(f())
        flat[i] = old
        grad.reshape(-1)[i] = (hi - lo) / (2 * step)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-6))


def check(loss_fn, tensors, tol=1e-4, coords_per_tensor=None, rng=None):
    """Compare taped grads of ``loss_fn()`` against finite differences; returns worst rel. error."""
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for t in tensors:
        coords = None
        if coords_per_tensor is not None and t.size > coords_per_tensor:
            coords = (rng or np.random.default_rng(0)).choice(t.size, coords_per_tensor, replace=False)
        num = numeric_grad(lambda: loss_fn().item(), t, coords=coords)
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        if coords is not None:
            num = num.reshape(-1)[coords]
            ana = ana.reshape(-1)[coords]
        err = rel_err(ana, num)
        if np.max(np.abs(ana - num)) <= ABS_FLOOR:
            err = 0.0
        worst = max(worst, err)
        assert err <= tol, f"{t.name or t.shape}: rel err {err:.2e} > {tol}"
    return worst
