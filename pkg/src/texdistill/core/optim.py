from __future__ import annotations

import numpy as np

from .tensor import NonFiniteError, Tensor


def poly_lr(iteration: int, max_iter: int, base_lr: float = 1e-4, power: float = 0.9) -> float:
    """Polynomial decay: ``base_lr * (1 - iteration / max_iter) ** power``."""
    if max_iter <= 0:
        raise ValueError("poly_lr: max_iter must be positive")
    if not 0 <= iteration <= max_iter:
        raise ValueError(f"poly_lr: iteration {iteration} outside [0, {max_iter}]")
    return base_lr * (1.0 - iteration / max_iter) ** power


class AdamW:
    """Adam with bias correction and decoupled weight decay.

    Parameters whose ``grad`` is None are left alone, decay included.

    ``groups`` is either a list of tensors or a list of dicts with keys
    ``params`` and optionally ``weight_decay``.
    """

    def __init__(self, groups, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        groups = list(groups)
        if groups and isinstance(groups[0], Tensor):
            groups = [{"params": groups}]
        self.groups = []
        for g in groups:
            self.groups.append({"params": list(g["params"]),
                                "weight_decay": g.get("weight_decay", weight_decay)})
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = {}
        self.v = {}

    @property
    def params(self) -> list[Tensor]:
        return [p for g in self.groups for p in g["params"]]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"non-finite gradient in parameter {p.name or p.shape}")
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for group in self.groups:
            wd = group["weight_decay"]
            for p in group["params"]:
                if p.grad is None:  # untouched this step: no moment update, no decay
                    continue
                g = p.grad
                key = id(p)
                if key not in self.m:
                    self.m[key] = np.zeros_like(p.data)
                    self.v[key] = np.zeros_like(p.data)
                m, v = self.m[key], self.v[key]
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                if wd:
                    p.data *= (1.0 - lr * wd)
                p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)
