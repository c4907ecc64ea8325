"""Parameters, a small module tree, and the layers the FTN graph is built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor, _wrap


class Param(Tensor):
    """A trainable leaf tensor carrying its own Adam moments."""

    __slots__ = ("name", "adam_m", "adam_v", "adam_step")

    def __init__(self, data, name: str = "", requires_grad: bool = True, dtype=None):
        super().__init__(data, requires_grad=requires_grad, dtype=dtype)
        self.name = name
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.adam_step = 0

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape}, dtype={self.dtype})"


class Module:
    """Container with recursive parameter/buffer discovery in attribute order."""

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, val in vars(self).items():
            if isinstance(val, (Param, Module)):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, (Param, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for key, val in self._children():
            full = f"{prefix}{key}"
            if isinstance(val, Param):
                yield full, val
            else:
                yield from val.named_parameters(full + ".")

    def parameters(self) -> list[Param]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, val in getattr(self, "_buffers", {}).items():
            yield f"{prefix}{key}", val
        for key, val in self._children():
            if isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{key}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, val in self._children():
            if isinstance(val, Module):
                yield from val.modules()

    def assign_names(self) -> None:
        for name, p in self.named_parameters():
            p.name = name

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def he_normal(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 1,
                 pad: int | None = None, bias: bool = True, dtype=np.float32):
        super().__init__()
        self.cin, self.cout, self.k, self.stride = cin, cout, k, stride
        self.pad = k // 2 if pad is None else pad
        self.weight = Param(he_normal(rng, (cout, cin, k, k), cin * k * k, dtype), dtype=dtype)
        self.bias = Param(np.zeros(cout, dtype=dtype), dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class BatchNorm2d(Module):
    def __init__(self, c: int, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float32):
        super().__init__()
        self.eps, self.momentum = eps, momentum
        self.weight = Param(np.ones(c, dtype=dtype), dtype=dtype)
        self.bias = Param(np.zeros(c, dtype=dtype), dtype=dtype)
        self._buffers = {
            "running_mean": np.zeros(c, dtype=dtype),
            "running_var": np.ones(c, dtype=dtype),
        }

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm2d(x, self.weight, self.bias, self._buffers["running_mean"],
                                self._buffers["running_var"], self.training, self.eps, self.momentum)


class Linear(Module):
    def __init__(self, fin: int, fout: int, rng: np.random.Generator, bias: bool = True, dtype=np.float32):
        super().__init__()
        bound = 1.0 / np.sqrt(fin)
        self.weight = Param(rng.uniform(-bound, bound, (fout, fin)).astype(dtype), dtype=dtype)
        self.bias = Param(np.zeros(fout, dtype=dtype), dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


def scalar_param(value: float = 0.0, dtype=np.float32) -> Param:
    return Param(np.array([value], dtype=dtype), dtype=dtype)


def constant(arr, dtype=None) -> Tensor:
    arr = np.asarray(arr)
    if dtype is not None:
        arr = arr.astype(dtype)
    return _wrap(arr)
