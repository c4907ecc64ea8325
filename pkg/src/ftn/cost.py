"""Analytic parameter and mult-add counts for the attention modules.

Counting convention (forward pass, one image):

* convolution: ``cout * cin * k * k * H * W`` mult-adds (all convs here keep H x W)
* matrix product ``M x K @ K x N``: ``M * K * N`` mult-adds
* batch norm, ReLU, softmax, channel pooling and elementwise fusion:
  one op per element touched
* parameters: conv weights + biases, batch-norm affine pairs, learnable scalars
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence


@dataclass(frozen=True)
class Conv:
    cin: int
    cout: int
    k: int = 1
    bias: bool = True

    @property
    def params(self) -> int:
        return self.cout * self.cin * self.k * self.k + (self.cout if self.bias else 0)

    def mult_adds(self, h: int, w: int) -> int:
        return self.cout * self.cin * self.k * self.k * h * w


@dataclass(frozen=True)
class Norm:
    channels: int

    @property
    def params(self) -> int:
        return 2 * self.channels

    def mult_adds(self, h: int, w: int) -> int:
        return self.channels * h * w


@dataclass(frozen=True)
class Scalar:
    count: int = 1

    @property
    def params(self) -> int:
        return self.count

    def mult_adds(self, h: int, w: int) -> int:
        return 0


@dataclass(frozen=True)
class PerElement:
    """Parameter-free op costing ``ops_per_pixel`` per spatial position."""

    ops_per_pixel: int
    label: str = ""

    params = 0

    def mult_adds(self, h: int, w: int) -> int:
        return self.ops_per_pixel * h * w


@dataclass(frozen=True)
class ChannelAffinity:
    """``D x N @ N x D`` product, row softmax over ``D x D`` and ``D x D @ D x N`` apply."""

    d: int
    params = 0

    def mult_adds(self, h: int, w: int) -> int:
        n = h * w
        return self.d * n * self.d + self.d * self.d + self.d * self.d * n


@dataclass(frozen=True)
class PositionAffinity:
    """``N x D @ D x N`` product, row softmax over ``N x N`` and ``D x N @ N x N`` apply."""

    d: int
    params = 0

    def mult_adds(self, h: int, w: int) -> int:
        n = h * w
        return n * self.d * n + n * n + self.d * n * n


def cfa_descriptor(channels: int, pool_factor: int = 2) -> list:
    d = channels // pool_factor
    return [
        PerElement(channels, "channel_max_pool"),
        Conv(d, d, 1, bias=False), Norm(d), PerElement(d, "relu_q"),
        Conv(d, d, 1, bias=False), Norm(d), PerElement(d, "relu_k"),
        Conv(d, d, 1, bias=True),
        ChannelAffinity(d),
        PositionAffinity(d),
        Scalar(2), PerElement(4 * d, "fusion"),
        Norm(d), Conv(d, channels, 1, bias=True),
    ]


def pamcam_descriptor(channels: int, reduction: int = 2) -> list:
    d = channels // reduction
    branch_common = [
        Conv(channels, d, 3, bias=False), Norm(d), PerElement(d, "relu"),
        Conv(d, d, 1), Conv(d, d, 1), Conv(d, d, 1),
        Scalar(1), PerElement(2 * d, "fusion"),
        Conv(d, channels, 3, bias=True),
    ]
    return (branch_common + [PositionAffinity(d)]
            + branch_common + [ChannelAffinity(d)]
            + [PerElement(2 * channels, "output_sum")])


DESCRIPTORS = {"cfa": cfa_descriptor, "pamcam": pamcam_descriptor}


def count_params(descriptor: Sequence) -> int:
    return sum(layer.params for layer in descriptor)


def count_flops(descriptor: Sequence, input_shape: Sequence[int]) -> int:
    """Mult-adds for one forward pass; ``input_shape`` is (C, H, W) or (B, C, H, W)."""
    if len(input_shape) == 4:
        batch, _, h, w = input_shape
    elif len(input_shape) == 3:
        batch, (_, h, w) = 1, input_shape
    else:
        raise ValueError(f"input_shape must be CHW or BCHW, got {input_shape}")
    return batch * sum(layer.mult_adds(h, w) for layer in descriptor)


@dataclass
class CostReport:
    module: str
    params: int
    mult_adds: int
    input_shape: list

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def cost_report(module: str, channels: int, h: int, w: int) -> CostReport:
    if module not in DESCRIPTORS:
        raise ValueError(f"unknown module {module!r}; choose from {sorted(DESCRIPTORS)}")
    desc = DESCRIPTORS[module](channels)
    shape = [channels, h, w]
    return CostReport(module, count_params(desc), count_flops(desc, shape), shape)
