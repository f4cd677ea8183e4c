"""Finite-difference checks of every differentiable op and of the losses end to end.

Each case builds float64 inputs from a fixed seed and reports the relative
error between backprop and central differences.
"""
from __future__ import annotations

import numpy as np

from .core import Tensor, check_gradients, precision
from .core import functional as F
from .losses import (LossBundle, Temperature, UncertaintyWeights, cls_loss, distill_loss, stat_loss,
                     struct_loss, total_loss)
from .models import Adapter, ConvBlock, HistogramPool
from .stat_texture import cooc_counts, linear_encode, quant_levels, rbf_encode, similarity_map, stat_texture
from .struct_texture import EdgeFusion, build_pyramid, sobel_bank, struct_texture

TOLERANCE = 1e-4


def _leaf(rng, shape, positive=False, scale=1.0):
    x = rng.standard_normal(shape) * scale
    return Tensor(np.abs(x) + 0.5 if positive else x, requires_grad=True)


def _separated(rng, shape):
    """Values with distinct magnitudes so max/argmax/abs/relu stay away from kinks."""
    n = int(np.prod(shape))
    v = (rng.permutation(n) + 1.0) / n * rng.choice([-1.0, 1.0], n)
    return Tensor(v.reshape(shape), requires_grad=True)


def _primitive_cases(rng):
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
    pos = _leaf(rng, (3, 4), positive=True)
    img = _leaf(rng, (2, 3, 7, 9))
    yield "add", lambda x, y: F.add(x, y), [a, b]
    yield "sub", lambda x, y: F.sub(x, y), [a, b]
    yield "mul", lambda x, y: F.mul(x, y), [a, b]
    yield "div", lambda x, y: F.div(x, y), [a, pos]
    yield "neg", F.neg, [a]
    yield "power", lambda x: F.power(x, 3.0), [a]
    yield "exp", F.exp, [a]
    yield "log", F.log, [pos]
    yield "sqrt", F.sqrt, [pos]
    yield "abs", F.abs, [_separated(rng, (3, 4))]
    yield "relu", F.relu, [_separated(rng, (3, 4))]
    yield "sum", lambda x: F.sum(x, axis=(0, 2)), [_leaf(rng, (2, 3, 4))]
    yield "mean", lambda x: F.mean(x, axis=1, keepdims=True), [_leaf(rng, (2, 3, 4))]
    yield "reshape", lambda x: F.reshape(x, (4, 3)), [a]
    yield "transpose", lambda x: F.transpose(x, (2, 0, 1)), [_leaf(rng, (2, 3, 4))]
    yield "broadcast_to", lambda x: F.broadcast_to(x, (2, 3, 4)), [_leaf(rng, (1, 3, 1))]
    yield "getitem", lambda x: x[np.array([0, 2, 2]), np.array([1, 3, 3])], [a]
    yield "concat", lambda x, y: F.concat([x, y], axis=1), [a, b]
    yield "stack", lambda x, y: F.stack([x, y], axis=-1), [a, b]
    yield "amax", lambda x: F.amax(x, 1), [_separated(rng, (3, 5))]
    yield "amin", lambda x: F.amin(x, 0), [_separated(rng, (3, 5))]
    yield "channel_max", lambda x: F.channel_max(x, axis=2), [_separated(rng, (2, 2, 8, 3, 3))]
    yield "cumsum", lambda x: F.cumsum(x, axis=1), [a]
    yield "matmul", F.matmul, [_leaf(rng, (2, 3, 4)), _leaf(rng, (2, 4, 5))]
    yield "outer_product", F.outer_product, [_leaf(rng, (2, 3)), _leaf(rng, (2, 4))]
    yield "linear", F.linear, [_leaf(rng, (3, 5)), _leaf(rng, (2, 5)), _leaf(rng, (2,))]
    yield "conv2d", lambda x, w, c: F.conv2d(x, w, c, padding=1), [img, _leaf(rng, (4, 3, 3, 3)), _leaf(rng, (4,))]
    yield "conv2d_stride2", lambda x, w: F.conv2d(x, w, stride=2), [img, _leaf(rng, (2, 3, 3, 3))]
    yield "conv2d_grouped", lambda x, w: F.conv2d(x, w, groups=3), [img, _leaf(rng, (6, 1, 3, 3))]
    yield "maxpool2d", lambda x: F.maxpool2d(x, 2), [_separated(rng, (2, 2, 5, 7))]
    yield "avgpool2d", lambda x: F.avgpool2d(x, 2), [_leaf(rng, (2, 2, 5, 7))]
    yield "global_avg_pool", F.global_avg_pool, [img]
    yield "softmax", lambda x: F.softmax(x, axis=1), [a]
    yield "log_softmax", lambda x: F.log_softmax(x, axis=1), [a]
    yield "cosine_similarity", lambda x, y: F.cosine_similarity(x, y, axis=1), [img, _leaf(rng, img.shape)]
    yield "norm", lambda x: F.norm(x, axis=-1), [a]
    yield "cdist", F.cdist, [_leaf(rng, (2, 4, 2)), _leaf(rng, (2, 3, 2))]
    yield "pad_reflect", lambda x: F.pad_reflect(x, 1), [img]
    yield "downsample2x_blur", F.downsample2x_blur, [img]
    yield "upsample2x_smooth", lambda x: F.upsample2x_smooth(x, (13, 17)), [img]
    yield "resize_bilinear", lambda x: F.resize_bilinear(x, (5, 12)), [img]


def _texture_cases(rng):
    fmap = _leaf(rng, (2, 3, 6, 8))
    sim = Tensor(np.tanh(rng.standard_normal((2, 5, 6))), requires_grad=True)
    yield "similarity_map", similarity_map, [fmap]
    yield "quant_levels", lambda s: quant_levels(s, 4).levels, [_separated(rng, (2, 5, 6))]
    yield "rbf_encode", lambda s: rbf_encode(s, quant_levels(s, 4)), [sim]
    yield "linear_encode", lambda s: linear_encode(s, quant_levels(s, 4)), [sim]
    yield "cooc_counts", cooc_counts, [_leaf(rng, (2, 4, 3, 5), positive=True)]
    yield "stat_texture", lambda x: stat_texture(x, 4).counts, [fmap]
    yield "build_pyramid", lambda x: F.concat([F.reshape(L, (2, 3, -1)) for L in build_pyramid(x, 2).laplacians],
                                              axis=2), [_leaf(rng, (2, 3, 9, 11))]
    yield "sobel_bank", sobel_bank, [fmap]
    stack = _separated(rng, (2, 3, 8, 4, 5))
    yield "fuse_all", EdgeFusion("all"), [stack]
    yield "fuse_max", EdgeFusion("max"), [stack]
    fusion = EdgeFusion("weighted_sum", 3)
    fusion.weight = _leaf(rng, (3, 8, 1, 1))

    def weighted(s, w):
        fusion.weight = w
        return fusion(s)
    yield "fuse_weighted_sum", weighted, [_leaf(rng, (2, 3, 8, 4, 5)), fusion.weight]
    yield "struct_texture", lambda x: F.concat([F.reshape(m, (2, -1)) for m in struct_texture(x, 2, "max")],
                                               axis=1), [_leaf(rng, (2, 3, 8, 10))]
    yield "histogram_pool", HistogramPool(16), [_leaf(rng, (2, 3, 4, 5), positive=True)]


def _triangle_margin(tap: Tensor, n_levels: int = 4) -> float:
    """Distance of the triangular bin weights from their kinks (|d| = 0 or one step).

    The extremes of S sit exactly on a kink (max on the top level, min one step below the first)
    and move with it, so exact hits are ignored.
    """
    S = similarity_map(tap)
    L = quant_levels(S, n_levels).levels.data
    step = (L[:, -1] - L[:, -2])[:, None, None, None]
    d = np.abs(L[:, :, None, None] - S.data[:, None]) / step
    gaps = np.concatenate([d.ravel(), np.abs(d - 1).ravel()])
    return float(gaps[gaps > 1e-9].min())


def _kink_free_input(rng, block, shape, margin=1e-3, linear_bins=False):
    """Redraw until no pre-activation sits near the relu kink and no pool window holds a near tie.

    Central differences straddling a kink would otherwise report spurious errors.
    """
    for _ in range(1000):
        x = Tensor(rng.standard_normal(shape))
        z = F.conv2d(x, block.weight, block.bias, padding=1).data
        a = np.maximum(z, 0.0)
        B, C, H, W = a.shape
        win = np.sort(a[:, :, :H // 2 * 2, :W // 2 * 2].reshape(B, C, H // 2, 2, W // 2, 2)
                      .transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4), axis=-1)
        top = win[..., -1]
        if np.abs(z).min() > margin and np.all((top - win[..., -2] > margin) | (top == 0)):
            if not linear_bins or _triangle_margin(block(x)) > margin:
                return x
    raise RuntimeError("could not draw a kink-free input")


def _loss_cases(rng):
    """Losses end to end: input -> conv block -> tap -> (adapter) -> textures -> loss."""
    block = ConvBlock(1, 3, rng, pool=True)
    adapter = Adapter(3, 4, seed=1)
    x = _kink_free_input(rng, block, (2, 1, 12, 16))
    t_tap = Tensor(rng.standard_normal((2, 4, 6, 8)))
    t_struct = struct_texture(t_tap, 2, "all")
    params = [block.weight, block.bias]

    def bind(w, b, inp=x):
        block.weight, block.bias = w, b
        return block(inp)

    x_lin = _kink_free_input(rng, block, x.shape, linear_bins=True)
    for binning, inp in (("rbf", x), ("linear", x_lin)):
        t_c = stat_texture(t_tap, 4, binning)
        yield f"stat_loss[{binning}]", lambda w, b, t_c=t_c, binning=binning, inp=inp: stat_loss(
            t_c, stat_texture(bind(w, b, inp), 4, binning)), params

    # the adapter bias is left out: a per-channel constant is erased by the Laplacian and by the
    # zero-sum kernels, so its gradient is exactly zero and the ratio would compare rounding noise
    def struct_case(w, b, aw):
        adapter.weight = aw
        return struct_loss(t_struct, struct_texture(adapter(bind(w, b)), 2, "all"))
    yield "struct_loss[adapter]", struct_case, params + [adapter.weight]

    fusion = EdgeFusion("weighted_sum", 4)
    fusion.weight = _leaf(rng, (4, 8, 1, 1))
    t_ws = struct_texture(t_tap, 2, fusion)

    def struct_ws(w, b, fw):
        fusion.weight = fw
        return struct_loss(t_ws, struct_texture(adapter(bind(w, b)), 2, fusion))
    yield "struct_loss[weighted_sum]", struct_ws, params + [fusion.weight]

    head = _leaf(rng, (4, 3))
    labels = np.array([1, 3])

    def logits_of(w, b, h):
        tap = bind(w, b)
        return F.linear(F.global_avg_pool(tap), h)

    yield "cls_loss", lambda w, b, h: cls_loss(logits_of(w, b, h), labels), params + [head]
    t_logits = Tensor(rng.standard_normal((2, 4)))
    temp = Temperature(1.5, learnable=True)

    def distill_case(w, b, h, log_t):
        temp.log_t = log_t
        return distill_loss(logits_of(w, b, h), t_logits, temp)
    yield "distill_loss[learnable T]", distill_case, params + [head, temp.log_t]

    weights = UncertaintyWeights(4)
    weights.log_vars = _leaf(rng, (4,), scale=0.5)
    for mode in ("literal", "kendall"):
        def total_case(w, b, h, s, mode=mode):
            tap = bind(w, b)
            logits = F.linear(F.global_avg_pool(tap), h)
            bundle = LossBundle(l_cls=cls_loss(logits, labels),
                                l_stat=stat_loss(stat_texture(t_tap, 4), stat_texture(tap, 4)),
                                l_struct=struct_loss(t_struct, struct_texture(adapter(tap), 2, "all")),
                                l_distill=distill_loss(logits, t_logits, 2.0))
            return total_loss(bundle, s, mode)
        yield f"total_loss[{mode}]", total_case, params + [head, weights.log_vars]


def run_suite(seed: int = 0, groups=("primitives", "textures", "losses")) -> list[tuple[str, float]]:
    """[(case name, max relative error)] at float64."""
    makers = {"primitives": _primitive_cases, "textures": _texture_cases, "losses": _loss_cases}
    results = []
    with precision(np.float64):
        rng = np.random.default_rng(seed)
        for group in groups:
            for name, fn, inputs in makers[group](rng):
                results.append((name, check_gradients(fn, inputs)))
    return results
