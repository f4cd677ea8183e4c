"""Brute-force loop references, deliberately written without vectorisation."""
import math

import numpy as np


def similarity(A):
    """A: (C, H, W) -> (H, W) cosine with the spatial mean vector."""
    C, H, W = A.shape
    g = [sum(A[c, i, j] for i in range(H) for j in range(W)) / (H * W) for c in range(C)]
    gn = math.sqrt(sum(v * v for v in g))
    S = np.zeros((H, W))
    for i in range(H):
        for j in range(W):
            dot = sum(A[c, i, j] * g[c] for c in range(C))
            an = math.sqrt(sum(A[c, i, j] ** 2 for c in range(C)))
            S[i, j] = dot / max(an * gn, 1e-12)
    return S


def cooc(E):
    """E: (N, H, W) -> normalised horizontal co-occurrence (N, N)."""
    N, H, W = E.shape
    out = np.zeros((N, N))
    for m in range(N):
        for n in range(N):
            for i in range(H):
                for j in range(W - 1):
                    out[m, n] += E[m, i, j] * E[n, i, j + 1]
    return out / out.sum()


def stat_emd(counts_t, centers_t, counts_s, centers_s):
    """Sum over every teacher bin and every student bin of D * (CDF_T - CDF_S)^2."""
    def cdf(h):
        N = h.shape[0]
        h = h / h.sum()
        return np.array([[sum(h[a, b] for a in range(m + 1) for b in range(n + 1)) for n in range(N)]
                         for m in range(N)])
    ct, cs = cdf(counts_t), cdf(counts_s)
    Nt, Ns = ct.shape[0], cs.shape[0]
    total = 0.0
    for m in range(Nt):
        for n in range(Nt):
            for p in range(Ns):
                for q in range(Ns):
                    d = math.dist(centers_t[m, n], centers_s[p, q])
                    total += d * (ct[m, n] - cs[p, q]) ** 2
    return total
