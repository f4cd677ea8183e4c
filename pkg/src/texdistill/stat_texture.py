"""Statistical texture: quantised similarity co-occurrences of a feature map.

A feature map is compared position-by-position with its global average
vector; the resulting similarity map is soft-quantised onto ``N`` evenly
spaced levels and horizontally adjacent encodings are accumulated into an
``N x N`` co-occurrence distribution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Tensor
from .core import functional as F


@dataclass
class QuantLevels:
    levels: Tensor          # (B, N), strictly increasing unless degenerate
    gamma: float
    degenerate: np.ndarray  # (B,) bool, constant similarity map


@dataclass
class CoocTexture:
    counts: Tensor   # (B, N, N), each slice sums to one
    centers: Tensor  # (B, N, N, 2), centers[b, m, n] = (Q_m, Q_n)
    levels: QuantLevels

    @property
    def n_levels(self) -> int:
        return self.counts.shape[-1]

    def as_array(self) -> np.ndarray:
        """(B, N, N, 3): level pair followed by the normalised count."""
        return np.concatenate([self.centers.data, self.counts.data[..., None]], axis=-1)


def _require_4d(A: Tensor, name: str) -> None:
    if A.ndim != 4:
        raise ValueError(f"{name}: expected a (B, C, H, W) feature map, got shape {A.shape}")


def similarity_map(A: Tensor, eps: float = 1e-12) -> Tensor:
    """Cosine similarity of every spatial position with the global average vector: (B, H, W)."""
    _require_4d(A, "similarity_map")
    B, C, H, W = A.shape
    g = F.reshape(F.global_avg_pool(A), (B, C, 1, 1))
    return F.cosine_similarity(A, F.broadcast_to(g, A.shape), axis=1, eps=eps)


def quant_levels(S: Tensor, n_levels: int = 4) -> QuantLevels:
    """Q_n = (n / N) (max S - min S) + min S for n = 1..N, per batch element."""
    if n_levels < 2:
        raise ValueError(f"need at least 2 quantisation levels, got {n_levels}")
    B = S.shape[0]
    flat = F.reshape(S, (B, -1))
    hi = F.amax(flat, 1)
    lo = F.amin(flat, 1)
    span = F.broadcast_to(F.reshape(hi - lo, (B, 1)), (B, n_levels))
    frac = Tensor(np.broadcast_to(np.arange(1, n_levels + 1, dtype=S.dtype) / n_levels,
                                  (B, n_levels)).copy())
    levels = span * frac + F.broadcast_to(F.reshape(lo, (B, 1)), (B, n_levels))
    degenerate = (hi.data - lo.data) <= 0
    return QuantLevels(levels=levels, gamma=2.0 / n_levels, degenerate=degenerate)


def _level_distances(S: Tensor, q: QuantLevels) -> Tensor:
    B, H, W = S.shape
    N = q.levels.shape[1]
    Q = F.broadcast_to(F.reshape(q.levels, (B, N, 1, 1)), (B, N, H, W))
    Sx = F.broadcast_to(F.reshape(S, (B, 1, H, W)), (B, N, H, W))
    return Q - Sx


def rbf_encode(S: Tensor, q: QuantLevels) -> Tensor:
    """E[b, n, i, j] = exp(-gamma^2 (Q_n - S_ij)^2): (B, N, H, W)."""
    d = _level_distances(S, q)
    return F.exp(d * d * (-q.gamma ** 2))


def linear_encode(S: Tensor, q: QuantLevels, eps: float = 1e-12) -> Tensor:
    """Triangular (linear-interpolation) binning with one-level half width."""
    d = _level_distances(S, q)
    B, N = q.levels.shape
    step = q.levels[:, N - 1] - q.levels[:, N - 2]
    step = F.broadcast_to(F.reshape(step + eps, (B, 1, 1, 1)), d.shape)
    return F.relu(1.0 - F.abs(d) / step)


def cooc_counts(E: Tensor) -> Tensor:
    """Normalised sum of outer products of horizontally adjacent encodings: (B, N, N)."""
    _require_4d(E, "cooc_counts")
    B, N, H, W = E.shape
    if W < 2:
        raise ValueError(f"cooc_counts needs at least two columns, got width {W}")
    left = F.reshape(E[:, :, :, :-1], (B, N, H * (W - 1)))
    right = F.reshape(E[:, :, :, 1:], (B, N, H * (W - 1)))
    raw = F.matmul(left, F.transpose(right, (0, 2, 1)))
    total = F.sum(raw, axis=(1, 2))
    if np.any(total.data <= 0):
        raise FloatingPointError("co-occurrence total is zero; encoding vanished everywhere")
    return raw / F.broadcast_to(F.reshape(total, (B, 1, 1)), raw.shape)


def level_centers(q: QuantLevels) -> Tensor:
    B, N = q.levels.shape
    rows = F.broadcast_to(F.reshape(q.levels, (B, N, 1)), (B, N, N))
    cols = F.broadcast_to(F.reshape(q.levels, (B, 1, N)), (B, N, N))
    return F.stack([rows, cols], axis=-1)


def stat_texture(A: Tensor, n_levels: int = 4, binning: str = "rbf") -> CoocTexture:
    """Similarity map, quantisation levels, soft encoding and co-occurrence counts."""
    S = similarity_map(A)
    q = quant_levels(S, n_levels)
    if binning == "rbf":
        E = rbf_encode(S, q)
    elif binning == "linear":
        E = linear_encode(S, q)
    else:
        raise ValueError(f"unknown binning {binning!r}; expected 'rbf' or 'linear'")
    return CoocTexture(counts=cooc_counts(E), centers=level_centers(q), levels=q)
