"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad


def _scalarize(out: Tensor, proj: np.ndarray | None):
    from . import functional as F
    if proj is None:
        return out
    return F.sum(F.mul(out, Tensor(proj)))


def numerical_grad(fn, inputs, proj=None, h: float = 1e-5) -> list[np.ndarray]:
    grads = []
    with no_grad():
        for t in inputs:
            x = t.data
            g = np.zeros_like(x)
            for idx in np.ndindex(x.shape):
                orig = x[idx]
                x[idx] = orig + h
                fp = _scalarize(fn(*inputs), proj).item()
                x[idx] = orig - h
                fm = _scalarize(fn(*inputs), proj).item()
                x[idx] = orig
                g[idx] = (fp - fm) / (2 * h)
            grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """||a - n|| / max(||a||, ||n||, floor)."""
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(num / den)


def check_gradients(fn, inputs, h: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between backprop and central differences over ``inputs``.

    ``fn(*inputs)`` may return any shape; non-scalar outputs are contracted with
    a fixed random projection so every output element contributes. Inputs should
    be float64 tensors with ``requires_grad=True``.
    """
    out = fn(*inputs)
    proj = None
    if out.size != 1 or out.ndim > 0:
        proj = np.random.default_rng(seed).standard_normal(out.shape)
    for t in inputs:
        t.grad = None
    _scalarize(out, proj).backward()
    numeric = numerical_grad(fn, inputs, proj, h)
    errs = []
    for t, n in zip(inputs, numeric):
        a = t.grad if t.grad is not None else np.zeros_like(t.data)
        errs.append(relative_error(a, n))
    return max(errs)
