"""Classification, texture and response distillation losses plus uncertainty weighting.

Teacher-side inputs are always treated as constants: only the student branch
(and learnable temperature / log-variances) receives gradients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Module, Tensor, parameter
from .core import functional as F
from .stat_texture import CoocTexture

LOSS_NAMES = ("cls", "stat", "struct", "distill")
WEIGHTING_MODES = ("literal", "kendall")


def _const(t) -> Tensor:
    return Tensor(t.data if isinstance(t, Tensor) else np.asarray(t))


def _check_finite(name: str, *arrays) -> None:
    for a in arrays:
        if np.isnan(a).any():
            raise ValueError(f"{name}: NaN in inputs")


def stat_loss(teacher: CoocTexture, student: CoocTexture) -> Tensor:
    """Ground-distance weighted squared difference of the two 2-D CDFs.

    Every teacher bin (m, n) is paired with every student bin (p, q); the pair
    contributes ``D * (CDF_T[m, n] - CDF_S[p, q])**2`` where ``D`` is the
    Euclidean distance between their level-pair centres. Mean over the batch.
    """
    _check_finite("stat_loss", teacher.counts.data, student.counts.data,
                  teacher.centers.data, student.centers.data)
    B, Nt, _ = teacher.counts.shape
    Ns = student.counts.shape[1]
    if student.counts.shape[0] != B:
        raise ValueError(f"stat_loss: batch sizes differ {teacher.counts.shape} vs {student.counts.shape}")
    Kt, Ks = Nt * Nt, Ns * Ns

    ht = teacher.counts.data / teacher.counts.data.sum(axis=(1, 2), keepdims=True)
    cdf_t = np.cumsum(np.cumsum(ht, axis=1), axis=2).reshape(B, Kt, 1)

    hs = student.counts
    hs = hs / F.broadcast_to(F.reshape(F.sum(hs, axis=(1, 2)), (B, 1, 1)), hs.shape)
    cdf_s = F.reshape(F.cumsum(F.cumsum(hs, axis=1), axis=2), (B, 1, Ks))

    dist = F.cdist(Tensor(teacher.centers.data.reshape(B, Kt, 2)),
                   F.reshape(student.centers, (B, Ks, 2)))
    diff = Tensor(np.broadcast_to(cdf_t, (B, Kt, Ks)).copy()) - F.broadcast_to(cdf_s, (B, Kt, Ks))
    return F.mean(F.sum(dist * diff * diff, axis=(1, 2)))


def struct_loss(teacher_maps, student_maps) -> Tensor:
    """1 - cosine similarity along channels, averaged over positions, levels and batch.

    Student maps are resized bilinearly to the teacher's spatial shape; channel
    counts must already agree.
    """
    if len(teacher_maps) != len(student_maps):
        raise ValueError(f"struct_loss: {len(teacher_maps)} teacher levels vs {len(student_maps)} student levels")
    per_level = []
    for k, (ft, fs) in enumerate(zip(teacher_maps, student_maps)):
        if ft.shape[1] != fs.shape[1]:
            raise ValueError(f"struct_loss level {k}: channel mismatch teacher {ft.shape} vs student {fs.shape}")
        fs = F.resize_bilinear(fs, ft.shape[-2:])
        per_level.append(F.mean(F.cosine_similarity(_const(ft), fs, axis=1)))
    return 1.0 - F.mean(F.stack(per_level))


def cls_loss(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of untempered softmax probabilities."""
    labels = np.asarray(labels, dtype=np.int64)
    B, C = logits.shape
    if labels.shape != (B,):
        raise ValueError(f"cls_loss: expected {B} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError(f"cls_loss: labels must lie in [0, {C}), got range [{labels.min()}, {labels.max()}]")
    logp = F.log_softmax(logits, axis=1)
    return -F.mean(logp[np.arange(B), labels])


class Temperature(Module):
    """Distillation temperature, fixed or learned through log T (so T > 0)."""

    kind = "temperature"

    def __init__(self, init: float = 1.0, learnable: bool = False):
        self.config = dict(init=init, learnable=learnable)
        if init <= 0:
            raise ValueError(f"temperature must be positive, got {init}")
        self.learnable = learnable
        self.init = float(init)
        self.log_t = parameter(np.array(np.log(init)), name="log_t")
        self.log_t.requires_grad = learnable

    @property
    def value(self) -> float:
        return float(np.exp(self.log_t.data))

    def tensor(self, dtype) -> Tensor:
        if self.learnable:
            lt = self.log_t if self.log_t.dtype == dtype else F.mul(self.log_t, 1.0)
            return F.exp(lt)
        return Tensor(np.asarray(self.value, dtype=dtype))


def _temper(logits: Tensor, T) -> Tensor:
    if isinstance(T, Temperature):
        T = T.tensor(logits.dtype)
    if isinstance(T, Tensor):
        return logits / F.broadcast_to(T, logits.shape)
    if T <= 0:
        raise ValueError(f"temperature must be positive, got {T}")
    return logits / float(T)


def distill_loss(student_logits: Tensor, teacher_logits, T=1.0) -> Tensor:
    """Mean over classes of squared differences between tempered softmax CDFs, mean over batch."""
    t_logits = _const(teacher_logits)
    if t_logits.shape != student_logits.shape:
        raise ValueError(f"distill_loss: logits shapes differ {student_logits.shape} vs {t_logits.shape}")
    cdf_s = F.cumsum(F.softmax(_temper(student_logits, T), axis=1), axis=1)
    cdf_t = F.cumsum(F.softmax(_temper(t_logits, T), axis=1), axis=1)
    d = cdf_s - cdf_t
    return F.mean(d * d)


class UncertaintyWeights(Module):
    """Learnable log-variances s_i = log sigma_i^2, one per loss term."""

    kind = "log_vars"

    def __init__(self, n: int = 4):
        self.config = dict(n=n)
        self.log_vars = parameter(np.zeros(n), name="log_vars")

    def alphas(self, mode: str = "literal") -> np.ndarray:
        s = self.log_vars.data.astype(np.float64)
        return np.exp(-s) + s if mode == "literal" else np.exp(-s)


@dataclass
class LossBundle:
    l_cls: Tensor | None = None
    l_stat: Tensor | None = None
    l_struct: Tensor | None = None
    l_distill: Tensor | None = None
    alphas: np.ndarray | None = None
    total: Tensor | None = None

    def terms(self) -> list:
        return [self.l_cls, self.l_stat, self.l_struct, self.l_distill]

    def as_dict(self) -> dict:
        out = {}
        for name, t in zip(LOSS_NAMES, self.terms()):
            if t is not None:
                out[f"l_{name}"] = float(t.data)
        if self.alphas is not None:
            out["alphas"] = [float(a) for a in self.alphas]
        if self.total is not None:
            out["total"] = float(self.total.data)
        return out


def total_loss(bundle: LossBundle, log_vars: Tensor, mode: str = "literal") -> Tensor:
    """Uncertainty-weighted sum of the enabled terms.

    literal: sum (exp(-s_i) + s_i) * L_i; kendall: sum exp(-s_i) * L_i + s_i.
    """
    if mode not in WEIGHTING_MODES:
        raise ValueError(f"unknown weighting mode {mode!r}; expected one of {WEIGHTING_MODES}")
    total = None
    alphas = np.full(len(LOSS_NAMES), np.nan)
    for i, L in enumerate(bundle.terms()):
        if L is None:
            continue
        s = log_vars[i]
        if s.dtype != L.dtype:
            s = Tensor(s.data.astype(L.dtype)) if not s.requires_grad else s
        w = F.exp(-s)
        if mode == "literal":
            term = (w + s) * L
        else:
            term = w * L + s
        alphas[i] = float(np.exp(-s.data) + s.data) if mode == "literal" else float(np.exp(-s.data))
        total = term if total is None else total + term
    if total is None:
        raise ValueError("total_loss: no loss terms enabled")
    bundle.alphas = alphas
    bundle.total = total
    return total
