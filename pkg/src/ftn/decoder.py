"""Texture-focused decoder: 1x1 head, PixelShuffle up-blocks with MSRB, sigmoid RGB tail."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import Conv2d, Module
from .tensor import Tensor, add, concat, relu, sigmoid

RESIDUAL_INIT_SCALE = 0.1
TAIL_INIT_SCALE = 0.1
TAIL_INIT_LEVEL = 0.05  # masked targets are dark


@dataclass(frozen=True)
class DecoderConfig:
    in_channels: int
    hidden_channels: int = 64
    num_up_blocks: int = 4
    up_ratio: int = 2
    out_channels: int = 3

    @property
    def upsample_factor(self) -> int:
        return self.up_ratio**self.num_up_blocks


class MsrbBlock(Module):
    """Two-scale cross-residual block (3x3 and 5x5 paths, swapped concat, 1x1 fuse)."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.conv3_a = Conv2d(channels, channels, 3, rng, dtype=dtype)
        self.conv5_a = Conv2d(channels, channels, 5, rng, dtype=dtype)
        self.conv3_b = Conv2d(2 * channels, channels, 3, rng, dtype=dtype)
        self.conv5_b = Conv2d(2 * channels, channels, 5, rng, dtype=dtype)
        self.fuse = Conv2d(2 * channels, channels, 1, rng, dtype=dtype)
        # damp the residual branch so stacked blocks start near identity
        self.fuse.weight.data *= RESIDUAL_INIT_SCALE

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(f"MSRB expects {self.channels} channels, got {x.shape[1]}")
        s1 = relu(self.conv3_a(x))
        s2 = relu(self.conv5_a(x))
        t1 = relu(self.conv3_b(concat([s1, s2], axis=1)))
        t2 = relu(self.conv5_b(concat([s2, s1], axis=1)))
        return add(x, self.fuse(concat([t1, t2], axis=1)))


class UpBlock(Module):
    """1x1 expand to r^2 * c, PixelShuffle, 3x3 conv + ReLU, MSRB."""

    def __init__(self, channels: int, ratio: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.ratio = ratio
        self.expand = Conv2d(channels, channels * ratio * ratio, 1, rng, dtype=dtype)
        self.conv = Conv2d(channels, channels, 3, rng, dtype=dtype)
        self.msrb = MsrbBlock(channels, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = ops.pixel_shuffle(self.expand(x), self.ratio)
        return self.msrb(relu(self.conv(x)))


class TFDecoder(Module):
    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        c = cfg.hidden_channels
        self.head = Conv2d(cfg.in_channels, c, 1, rng, dtype=dtype)
        self.blocks = [UpBlock(c, cfg.up_ratio, rng, dtype=dtype) for _ in range(cfg.num_up_blocks)]
        self.tail = Conv2d(c, cfg.out_channels, 3, rng, dtype=dtype)
        # keep the sigmoid out of saturation at init and start near typical target intensity
        self.tail.weight.data *= TAIL_INIT_SCALE
        self.tail.bias.data[:] = np.log(TAIL_INIT_LEVEL / (1.0 - TAIL_INIT_LEVEL))
        self.calls = 0  # instrumentation: inference must never touch the decoder

    def forward(self, f4: Tensor) -> Tensor:
        if f4.ndim != 4 or f4.shape[1] != self.cfg.in_channels:
            raise ValueError(f"decoder expects B x {self.cfg.in_channels} x h x w, got {f4.shape}")
        self.calls += 1
        x = self.head(f4)
        for blk in self.blocks:
            x = blk(x)
        return sigmoid(self.tail(x))
