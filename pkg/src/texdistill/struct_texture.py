"""Structural texture: Laplacian pyramid, 8-way compass Sobel responses, fusion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Module, Tensor, kaiming_uniform, parameter
from .core import functional as F

ORIENTATIONS = (0, 45, 90, 135, 180, 225, 270, 315)
FUSION_MODES = ("all", "max", "weighted_sum")

# outer ring of a 3x3 kernel, clockwise from the top-left corner
_RING = ((0, 0), (0, 1), (0, 2), (1, 2), (2, 2), (2, 1), (2, 0), (1, 0))


def compass_kernels() -> np.ndarray:
    """Eight 3x3 Sobel kernels; each orientation rotates the ring one step clockwise."""
    base = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
    ring = np.array([base[r, c] for r, c in _RING])
    bank = np.zeros((8, 3, 3))
    for k in range(8):
        rotated = np.roll(ring, k)
        for (r, c), v in zip(_RING, rotated):
            bank[k, r, c] = v
    return bank


SOBEL_BANK = compass_kernels()


@dataclass
class Pyramid:
    gaussians: list[Tensor]   # G_0 .. G_N
    laplacians: list[Tensor]  # L_0 .. L_{N-1}, then the residual L_N = G_N

    @property
    def levels(self) -> int:
        return len(self.gaussians) - 1

    def reconstruct(self) -> Tensor:
        g = self.laplacians[-1]
        for k in range(self.levels - 1, -1, -1):
            g = self.laplacians[k] + F.upsample2x_smooth(g, self.laplacians[k].shape[-2:])
        return g


def build_pyramid(I: Tensor, levels: int = 4) -> Pyramid:
    if levels < 1:
        raise ValueError(f"pyramid needs at least one level, got {levels}")
    if I.shape[-2] < 1 or I.shape[-1] < 1:
        raise ValueError(f"too many levels: spatial extent {I.shape[-2:]} is empty")
    gaussians = [I]
    laplacians = []
    for _ in range(levels):
        g = gaussians[-1]
        down = F.downsample2x_blur(g)
        gaussians.append(down)
        laplacians.append(g - F.upsample2x_smooth(down, g.shape[-2:]))
    laplacians.append(gaussians[-1])
    return Pyramid(gaussians=gaussians, laplacians=laplacians)


def sobel_bank(L: Tensor) -> Tensor:
    """Depthwise compass responses with reflect padding: (B, C, H, W) -> (B, C, 8, H, W)."""
    B, C, H, W = L.shape
    w = Tensor(np.tile(SOBEL_BANK[:, None], (C, 1, 1, 1)).astype(L.dtype))
    out = F.conv2d(F.pad_reflect(L, 1), w, groups=C)
    return F.reshape(out, (B, C, 8, H, W))


class EdgeFusion(Module):
    """Combines the eight orientation responses of every channel.

    ``all`` keeps them (channel c, orientation k lands at c * 8 + k),
    ``max`` takes the strongest, ``weighted_sum`` applies a learned grouped
    1x1 convolution with one weight per (channel, orientation).

    Equal weights would cancel exactly (opposite compass kernels are
    negatives of each other), so learned weights start from a seeded
    Kaiming-uniform draw.
    """

    kind = "fusion"

    def __init__(self, mode: str = "all", channels: int | None = None, seed: int = 0):
        if mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {mode!r}; expected one of {FUSION_MODES}")
        self.mode = mode
        self.config = dict(mode=mode, channels=channels, seed=seed)
        if mode == "weighted_sum":
            if channels is None:
                raise ValueError("weighted_sum fusion needs the channel count")
            w = kaiming_uniform(np.random.default_rng([seed, 2]), (channels, 8, 1, 1), 8)
            self.weight = parameter(w, name="fusion.weight")

    def out_channels(self, channels: int) -> int:
        return 8 * channels if self.mode == "all" else channels

    def __call__(self, stack: Tensor) -> Tensor:
        B, C, K, H, W = stack.shape
        if self.mode == "all":
            return F.reshape(stack, (B, C * K, H, W))
        if self.mode == "max":
            return F.channel_max(stack, axis=2)
        if self.weight.shape[0] != C:
            raise ValueError(f"fusion weights cover {self.weight.shape[0]} channels, input has {C}")
        w = self.weight if self.weight.dtype == stack.dtype else Tensor(
            self.weight.data.astype(stack.dtype))
        return F.conv2d(F.reshape(stack, (B, C * K, H, W)), w, groups=C)


def fuse(stack: Tensor, mode: str = "all", weights: Tensor | None = None) -> Tensor:
    fusion = EdgeFusion(mode, stack.shape[1] if mode == "weighted_sum" else None)
    if weights is not None:
        fusion.weight = weights
    return fusion(stack)


def struct_texture(A: Tensor, levels: int = 4, fusion: EdgeFusion | str = "all") -> list[Tensor]:
    """Fused edge responses for every Laplacian level, residual included (levels + 1 maps)."""
    if isinstance(fusion, str):
        fusion = EdgeFusion(fusion, A.shape[1] if fusion == "weighted_sum" else None)
    pyr = build_pyramid(A, levels)
    return [fusion(sobel_bank(L)) for L in pyr.laplacians]
