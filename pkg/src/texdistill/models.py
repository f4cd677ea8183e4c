"""Student and teacher conv nets, the histogram pooling head and the channel adapter."""
from __future__ import annotations

import numpy as np

from .containers import load_txdw, save_txdw
from .core import Module, Tensor, default_dtype, kaiming_uniform, parameter
from .core import functional as F
from .losses import Temperature, UncertaintyWeights
from .struct_texture import EdgeFusion

STUDENT_CHANNELS = (8, 12, 16, 24)
TEACHER_CHANNELS = (32, 32, 64, 64, 96, 96, 128, 128)
TEACHER_POOLED = 6


class ConvBlock(Module):
    """3x3 conv (pad 1), relu, optional 2x2 max-pool."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, pool: bool = True):
        self.weight = parameter(kaiming_uniform(rng, (c_out, c_in, 3, 3), c_in * 9))
        self.bias = parameter(np.zeros(c_out, dtype=self.weight.dtype))
        self.pool = pool

    def __call__(self, x: Tensor) -> Tensor:
        y = F.relu(F.conv2d(x, self.weight, self.bias, padding=1))
        return F.maxpool2d(y, 2) if self.pool else y


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = parameter(kaiming_uniform(rng, (n_out, n_in), n_in))
        self.bias = parameter(np.zeros(n_out, dtype=self.weight.dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class HistogramPool(Module):
    """Soft histogram of activations per channel with fixed RBF bins.

    Each position's bin memberships are normalised to sum to one, then
    averaged over space, so every channel's histogram sums to one.
    """

    def __init__(self, n_bins: int = 16, lo: float = 0.0, hi: float = 2.0):
        self.n_bins = n_bins
        self.centers = np.linspace(lo, hi, n_bins)
        self.width = (hi - lo) / (n_bins - 1)

    def __call__(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        K = self.n_bins
        xs = F.broadcast_to(F.reshape(x, (B, C, 1, H * W)), (B, C, K, H * W))
        c = Tensor(np.broadcast_to(self.centers.astype(x.dtype)[:, None], (B, C, K, H * W)).copy())
        d = (xs - c) / self.width
        # normalised RBF memberships == softmax over bins of -d^2, which never underflows to 0/0
        return F.mean(F.softmax(-(d * d), axis=2), axis=3)  # (B, C, K)


class ConvNet(Module):
    """Conv stack, tap after ``tap_block`` (1-based), then a pooling head and a linear classifier."""

    kind = "convnet"

    def __init__(self, channels, n_classes: int = 4, seed: int = 0, tap_block: int = 2,
                 pooled_blocks: int | None = None, head: str = "gap", n_hist: int = 16):
        rng = np.random.default_rng(seed)
        pooled = len(channels) if pooled_blocks is None else pooled_blocks
        self.config = dict(channels=list(channels), n_classes=n_classes, seed=seed, tap_block=tap_block,
                           pooled_blocks=pooled, head=head, n_hist=n_hist)
        c_in = 1
        self.blocks = []
        for i, c in enumerate(channels):
            self.blocks.append(ConvBlock(c_in, c, rng, pool=i < pooled))
            c_in = c
        self.tap_block = tap_block
        self.tap_channels = channels[tap_block - 1]
        if head == "hist":
            self.hist = HistogramPool(n_hist)
            n_feat = c_in * n_hist
        elif head == "gap":
            self.hist = None
            n_feat = c_in
        else:
            raise ValueError(f"unknown head {head!r}")
        self.fc = Linear(n_feat, n_classes, rng)

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected input of shape (B, 1, mels, frames), got {x.shape}")
        tap = None
        for i, block in enumerate(self.blocks, start=1):
            x = block(x)
            if i == self.tap_block:
                tap = x
        B, C = x.shape[:2]
        feat = F.reshape(self.hist(x), (B, -1)) if self.hist is not None else F.global_avg_pool(x)
        return self.fc(F.reshape(feat, (B, -1))), tap

    def predict(self, x: Tensor) -> np.ndarray:
        logits, _ = self(x)
        return np.argmax(logits.data, axis=1)


class StudentNet(ConvNet):
    kind = "student"

    def __init__(self, n_classes: int = 4, seed: int = 0, channels=STUDENT_CHANNELS, n_hist: int = 16,
                 tap_block: int = 2):
        super().__init__(channels, n_classes, seed, tap_block, head="hist", n_hist=n_hist)
        self.config = dict(n_classes=n_classes, seed=seed, channels=list(channels), n_hist=n_hist,
                           tap_block=tap_block)


class TeacherNet(ConvNet):
    kind = "teacher"

    def __init__(self, n_classes: int = 4, seed: int = 0, channels=TEACHER_CHANNELS,
                 pooled_blocks: int = TEACHER_POOLED, tap_block: int = 2):
        super().__init__(channels, n_classes, seed, tap_block, pooled_blocks=pooled_blocks, head="gap")
        self.config = dict(n_classes=n_classes, seed=seed, channels=list(channels),
                           pooled_blocks=pooled_blocks, tap_block=tap_block)


class Adapter(Module):
    """1x1 conv from student tap channels to teacher tap channels.

    Square adapters start at the identity; others use Kaiming init.
    """

    kind = "adapter"

    def __init__(self, c_in: int, c_out: int, seed: int = 0):
        self.config = dict(c_in=c_in, c_out=c_out, seed=seed)
        if c_in == c_out:
            w = np.eye(c_in)[:, :, None, None]
        else:
            w = kaiming_uniform(np.random.default_rng([seed, 1]), (c_out, c_in, 1, 1), c_in)
        self.weight = parameter(w.astype(default_dtype()))
        self.bias = parameter(np.zeros(c_out, dtype=self.weight.dtype))

    def __call__(self, tap: Tensor) -> Tensor:
        if tap.ndim != 4 or tap.shape[1] != self.config["c_in"]:
            raise ValueError(f"adapter expects {self.config['c_in']} input channels, got shape {tap.shape}")
        return F.conv2d(tap, self.weight, self.bias)


def _registry() -> dict:
    return {"student": StudentNet, "teacher": TeacherNet, "adapter": Adapter, "fusion": EdgeFusion,
            "temperature": Temperature, "log_vars": UncertaintyWeights}


def build(kind: str, config: dict) -> Module:
    kinds = _registry()
    if kind not in kinds:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(kinds)}")
    return kinds[kind](**config)


def save_checkpoint(path, modules: dict[str, Module], meta: dict | None = None) -> None:
    """One TXDW file holding several modules; architecture configs go into the metadata."""
    tensors, arch = {}, {}
    for key, m in modules.items():
        arch[key] = {"kind": m.kind, "config": m.config}
        for name, arr in m.state_dict().items():
            tensors[f"{key}/{name}"] = arr
    save_txdw(path, tensors, {"arch": arch, **(meta or {})})


def load_checkpoint(path) -> tuple[dict[str, Module], dict]:
    tensors, meta = load_txdw(path)
    if "arch" not in meta:
        raise ValueError(f"{path}: checkpoint has no architecture metadata")
    modules = {}
    for key, spec in meta["arch"].items():
        m = build(spec["kind"], spec["config"])
        prefix = key + "/"
        m.load_state_dict({k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)})
        modules[key] = m
    return modules, meta
