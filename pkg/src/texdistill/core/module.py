from __future__ import annotations

import hashlib

import numpy as np

from .tensor import Tensor, default_dtype


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=None) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype or default_dtype())


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True, name=name)


class Module:
    """Container for named parameters and child modules.

    Every tensor attribute is a parameter, frozen ones included. Child modules
    are discovered the same way. Attribute order defines the parameter order,
    which keeps optimizers and checkpoints deterministic.
    """

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            if isinstance(value, Tensor):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + key + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"missing parameters in state: {missing}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"parameter {name}: expected {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()
