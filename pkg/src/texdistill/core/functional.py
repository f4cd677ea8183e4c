"""Differentiable primitives.

Every function takes and returns :class:`Tensor` objects and registers its own
backward rule. Binary elementwise ops require identical shapes (or a plain
Python scalar on one side); use :func:`broadcast_to` to expand explicitly.
"""
from __future__ import annotations

import functools
import numbers

import numpy as np

from .tensor import Tensor, as_tensor, make_node

BINOMIAL5 = np.array([0.05, 0.25, 0.4, 0.25, 0.05])


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _is_scalar(x) -> bool:
    return isinstance(x, numbers.Number) or (isinstance(x, np.ndarray) and x.ndim == 0)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    if _is_scalar(b):
        a = as_tensor(a)
        return make_node(a.data + b, (a,), lambda g: (g,), "add")
    if _is_scalar(a):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "add")
    return make_node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    if _is_scalar(b):
        return add(a, -b)
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "sub")
    return make_node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    if _is_scalar(b):
        a = as_tensor(a)
        return make_node(a.data * b, (a,), lambda g: (g * b,), "mul")
    if _is_scalar(a):
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "mul")
    return make_node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a, b) -> Tensor:
    if _is_scalar(b):
        return mul(a, 1.0 / b)
    b = as_tensor(b)
    if _is_scalar(a):
        out = a / b.data
        return make_node(out, (b,), lambda g: (-g * out / b.data,), "div")
    a = as_tensor(a)
    _check_same(a, b, "div")
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return ga, -ga * out

    return make_node(out, (a, b), backward, "div")


def power(x: Tensor, p: float) -> Tensor:
    out = x.data ** p
    return make_node(out, (x,), lambda g: (g * p * x.data ** (p - 1),), "power")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_node(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return make_node(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return make_node(out, (x,), lambda g: (g / (2.0 * out),), "sqrt")


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return make_node(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(x.data * mask, (x,), lambda g: (g * mask,), "relu")


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand_reduced(g, axes, shape, keepdims):
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, x.ndim)
    out = np.sum(x.data, axis=axes, keepdims=keepdims)
    return make_node(np.asarray(out), (x,),
                     lambda g: (np.array(_expand_reduced(g, axes, x.shape, keepdims)),), "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum(x, axis, keepdims), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_node(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                     lambda g: (np.ascontiguousarray(g.transpose(inverse)),), "transpose")


def broadcast_to(x: Tensor, shape) -> Tensor:
    """Explicit numpy-rule expansion; the backward pass sums over expanded axes."""
    shape = tuple(shape)
    out = np.array(np.broadcast_to(x.data, shape))
    lead = len(shape) - x.ndim

    def backward(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(x.shape) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return make_node(out, (x,), backward, "broadcast_to")


def getitem(x: Tensor, index) -> Tensor:
    out = np.array(x.data[index])

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return make_node(out, (x,), backward, "getitem")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_node(out, tuple(tensors), backward, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_node(out, tuple(tensors), backward, "stack")


def amax(x: Tensor, axis: int) -> Tensor:
    """Max along one axis; ties send the gradient to the first maximiser."""
    axis = axis % x.ndim
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return make_node(out, (x,), backward, "amax")


def amin(x: Tensor, axis: int) -> Tensor:
    return neg(amax(neg(x), axis))


def channel_max(x: Tensor, axis: int = 1) -> Tensor:
    return amax(x, axis)


def cumsum(x: Tensor, axis: int) -> Tensor:
    def backward(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return make_node(np.cumsum(x.data, axis=axis), (x,), backward, "cumsum")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return make_node(a.data @ b.data, (a, b), backward, "matmul")


def outer_product(a: Tensor, b: Tensor) -> Tensor:
    """Batched outer product: (..., N) x (..., M) -> (..., N, M)."""
    if a.shape[:-1] != b.shape[:-1]:
        raise ValueError(f"outer_product: batch shapes differ {a.shape} vs {b.shape}")
    out = a.data[..., :, None] * b.data[..., None, :]

    def backward(g):
        return (np.einsum("...nm,...m->...n", g, b.data),
                np.einsum("...nm,...n->...m", g, a.data))

    return make_node(out, (a, b), backward, "outer_product")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x (B, I), w (O, I), b (O,) -> (B, O). Bias-add is the one broadcast the engine allows."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    out = x.data @ w.data.T
    parents = (x, w)
    if b is not None:
        out = out + b.data
        parents = (x, w, b)

    def backward(g):
        grads = [g @ w.data if x.requires_grad else None, g.T @ x.data]
        if b is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return make_node(out, parents, backward, "linear")


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """Cross-correlation with zero padding. x (B, C, H, W), w (O, C/groups, kh, kw)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d: expected 4-D input and weight, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    O, Cg, kh, kw = w.shape
    if C % groups or O % groups or Cg != C // groups:
        raise ValueError(f"conv2d: input {x.shape} incompatible with weight {w.shape} (groups={groups})")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    Ho, Wo = (Hp - kh) // stride + 1, (Wp - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ValueError(f"conv2d: kernel {w.shape[2:]} larger than padded input {(Hp, Wp)}")

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    xt = xp.transpose(1, 0, 2, 3)
    cols = np.empty((C, kh, kw, B, Ho, Wo), dtype=x.dtype)
    for dy in range(kh):
        for dx in range(kw):
            cols[:, dy, dx] = xt[:, :, dy:dy + stride * Ho:stride, dx:dx + stride * Wo:stride]
    K = Cg * kh * kw
    N = B * Ho * Wo
    cols = cols.reshape(groups, K, N)
    wm = w.data.reshape(groups, O // groups, K)
    out = np.matmul(wm, cols).reshape(O, B, Ho, Wo).transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.data.reshape(1, O, 1, 1)
    out = np.ascontiguousarray(out)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gt = g.transpose(1, 0, 2, 3).reshape(groups, O // groups, N)
        gw = np.matmul(gt, cols.transpose(0, 2, 1)).reshape(w.shape)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(wm.transpose(0, 2, 1), gt).reshape(C, kh, kw, B, Ho, Wo)
            gxt = np.zeros((C, B, Hp, Wp), dtype=x.dtype)
            for dy in range(kh):
                for dx in range(kw):
                    gxt[:, :, dy:dy + stride * Ho:stride, dx:dx + stride * Wo:stride] += gcols[:, dy, dx]
            gx = gxt.transpose(1, 0, 2, 3)
            if padding:
                gx = gx[:, :, padding:padding + H, padding:padding + W]
            gx = np.ascontiguousarray(gx)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return make_node(out, parents, backward, "conv2d")


def _pool_view(x: np.ndarray, k: int):
    B, C, H, W = x.shape
    Ho, Wo = H // k, W // k
    if Ho < 1 or Wo < 1:
        raise ValueError(f"pool: input {x.shape} smaller than window {k}")
    v = x[:, :, :Ho * k, :Wo * k].reshape(B, C, Ho, k, Wo, k).transpose(0, 1, 2, 4, 3, 5)
    return v.reshape(B, C, Ho, Wo, k * k), Ho, Wo


def _unpool(gv: np.ndarray, shape, k: int, Ho: int, Wo: int, dtype):
    B, C = shape[:2]
    gx = np.zeros(shape, dtype=dtype)
    gx[:, :, :Ho * k, :Wo * k] = gv.reshape(B, C, Ho, Wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(
        B, C, Ho * k, Wo * k)
    return gx


def maxpool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping k x k max pooling; trailing rows/cols that do not fill a window are dropped.

    Ties route the gradient to the first window element in row-major order.
    """
    B, C, H, W = x.shape
    Ho, Wo = H // k, W // k
    if Ho < 1 or Wo < 1:
        raise ValueError(f"pool: input {x.shape} smaller than window {k}")
    offsets = [(dy, dx) for dy in range(k) for dx in range(k)]
    views = [x.data[:, :, dy:Ho * k:k, dx:Wo * k:k] for dy, dx in offsets]
    out = views[0].copy()
    for v in views[1:]:
        np.maximum(out, v, out=out)

    def backward(g):
        gx = np.zeros(x.shape, dtype=x.dtype)
        free = np.ones(out.shape, dtype=bool)
        for (dy, dx), v in zip(offsets, views):
            hit = (v == out) & free
            gx[:, :, dy:Ho * k:k, dx:Wo * k:k] = np.where(hit, g, 0)
            free &= ~hit
        return (gx,)

    return make_node(out, (x,), backward, "maxpool2d")


def avgpool2d(x: Tensor, k: int = 2) -> Tensor:
    v, Ho, Wo = _pool_view(x.data, k)
    out = v.mean(axis=-1)

    def backward(g):
        gv = np.repeat(g[..., None] / (k * k), k * k, axis=-1)
        return (_unpool(gv, x.shape, k, Ho, Wo, x.dtype),)

    return make_node(out, (x,), backward, "avgpool2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C)."""
    return mean(x, axis=(2, 3))


# ---------------------------------------------------------------------------
# normalisers and similarities
# ---------------------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (x,), backward, "log_softmax")


def cosine_similarity(a: Tensor, b: Tensor, axis: int = 1, eps: float = 1e-12) -> Tensor:
    """Cosine along ``axis`` with denominator max(|a||b|, eps); zero vectors give 0."""
    _check_same(a, b, "cosine_similarity")
    dot = (a.data * b.data).sum(axis=axis)
    na = np.sqrt((a.data ** 2).sum(axis=axis))
    nb = np.sqrt((b.data ** 2).sum(axis=axis))
    prod = na * nb
    clamped = prod <= eps
    den = np.where(clamped, eps, prod)
    out = dot / den

    def backward(g):
        # unclamped: d cos / d a = b / den - cos * a / |a|^2 ; clamped: b / eps
        ge = np.expand_dims(g / den, axis)
        gc = np.where(clamped, 0.0, g * out)
        ga = gb = None
        if a.requires_grad:
            sa = np.where(clamped, 1.0, na ** 2)
            ga = ge * b.data - np.expand_dims(gc / sa, axis) * a.data
        if b.requires_grad:
            sb = np.where(clamped, 1.0, nb ** 2)
            gb = ge * a.data - np.expand_dims(gc / sb, axis) * b.data
        return ga, gb

    return make_node(out, (a, b), backward, "cosine_similarity")


def norm(x: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at a zero vector is taken as 0."""
    out = np.sqrt((x.data ** 2).sum(axis=axis))

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        scale = np.where(out > 0, g / safe, 0.0)
        return (np.expand_dims(scale, axis) * x.data,)

    return make_node(out, (x,), backward, "norm")


def cdist(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise Euclidean distances: a (B, K, D), b (B, M, D) -> (B, K, M)."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[2]:
        raise ValueError(f"cdist: incompatible shapes {a.shape} and {b.shape}")
    sq = np.zeros((a.shape[0], a.shape[1], b.shape[1]), dtype=a.dtype)
    for d in range(a.shape[2]):
        sq += (a.data[:, :, None, d] - b.data[:, None, :, d]) ** 2
    out = np.sqrt(sq)

    def backward(g):
        w = np.where(out > 0, g / np.where(out > 0, out, 1.0), 0.0)
        ga = np.empty_like(a.data) if a.requires_grad else None
        gb = np.empty_like(b.data) if b.requires_grad else None
        for d in range(a.shape[2]):
            diff = a.data[:, :, None, d] - b.data[:, None, :, d]
            if ga is not None:
                ga[:, :, d] = (w * diff).sum(axis=2)
            if gb is not None:
                gb[:, :, d] = -(w * diff).sum(axis=1)
        return ga, gb

    return make_node(out, (a, b), backward, "cdist")


# ---------------------------------------------------------------------------
# separable resampling (pyramids, padding, resizing)
# ---------------------------------------------------------------------------

def separable_linear(x: Tensor, rows: np.ndarray, cols: np.ndarray, op: str = "separable") -> Tensor:
    """Apply ``rows @ X @ cols.T`` to the two trailing axes of x."""
    if x.shape[-2] != rows.shape[1] or x.shape[-1] != cols.shape[1]:
        raise ValueError(f"{op}: operator {rows.shape}/{cols.shape} does not fit input {x.shape}")
    r = rows.astype(x.dtype, copy=False)
    c = cols.astype(x.dtype, copy=False)
    out = np.matmul(np.matmul(r, x.data), c.T)
    return make_node(out, (x,), lambda g: (np.matmul(np.matmul(r.T, g), c),), op)


@functools.lru_cache(maxsize=None)
def reflect_pad_matrix(n: int, pad: int) -> np.ndarray:
    return np.pad(np.eye(n), ((pad, pad), (0, 0)), mode="reflect")


def _correlate_valid(n_out: int, kernel: np.ndarray) -> np.ndarray:
    m = np.zeros((n_out, n_out + len(kernel) - 1))
    for i in range(n_out):
        m[i, i:i + len(kernel)] = kernel
    return m


@functools.lru_cache(maxsize=None)
def blur_matrix(n: int) -> np.ndarray:
    """Reflect-padded 5-tap binomial blur as an (n, n) matrix."""
    return _correlate_valid(n, BINOMIAL5) @ reflect_pad_matrix(n, 2)


@functools.lru_cache(maxsize=None)
def downsample_matrix(n: int) -> np.ndarray:
    """Blur then keep even samples: (ceil(n/2), n)."""
    return blur_matrix(n)[::2]


@functools.lru_cache(maxsize=None)
def upsample_matrix(n: int, target: int) -> np.ndarray:
    """Zero-insert, blur with twice the binomial kernel, crop to ``target``: (target, n)."""
    canvas = max(2 * n, target + (target % 2))
    z = np.zeros((canvas, n))
    z[np.arange(n) * 2, np.arange(n)] = 1.0
    m = (_correlate_valid(canvas, 2.0 * BINOMIAL5) @ reflect_pad_matrix(canvas, 2)) @ z
    return m[:target]


@functools.lru_cache(maxsize=None)
def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel-centre linear interpolation, edge-clamped: (n_out, n_in)."""
    m = np.zeros((n_out, n_in))
    if n_in == n_out:
        return np.eye(n_in)
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        t = src - lo
        m[i, lo] += 1.0 - t
        m[i, hi] += t
    return m


def pad_reflect(x: Tensor, pad: int) -> Tensor:
    H, W = x.shape[-2:]
    return separable_linear(x, reflect_pad_matrix(H, pad), reflect_pad_matrix(W, pad), "pad_reflect")


def downsample2x_blur(x: Tensor) -> Tensor:
    H, W = x.shape[-2:]
    if H < 1 or W < 1:
        raise ValueError(f"downsample2x_blur: empty spatial extent {x.shape}")
    return separable_linear(x, downsample_matrix(H), downsample_matrix(W), "downsample2x_blur")


def upsample2x_smooth(x: Tensor, target: tuple[int, int]) -> Tensor:
    H, W = x.shape[-2:]
    th, tw = target
    return separable_linear(x, upsample_matrix(H, th), upsample_matrix(W, tw), "upsample2x_smooth")


def resize_bilinear(x: Tensor, target: tuple[int, int]) -> Tensor:
    H, W = x.shape[-2:]
    if (H, W) == tuple(target):
        return x
    return separable_linear(x, bilinear_matrix(H, target[0]), bilinear_matrix(W, target[1]),
                            "resize_bilinear")
