"""Compact foreground attention and the two-branch position/channel baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import BatchNorm2d, Conv2d, Module, scalar_param
from .tensor import Tensor, add, matmul, mul, relu, softmax, transpose


@dataclass(frozen=True)
class CfaConfig:
    in_channels: int
    pool_factor: int = 2

    def __post_init__(self):
        if self.pool_factor < 1 or self.in_channels % self.pool_factor:
            raise ValueError(f"in_channels {self.in_channels} not divisible by pool_factor {self.pool_factor}")

    @property
    def reduced_channels(self) -> int:
        return self.in_channels // self.pool_factor


@dataclass
class CfaOutput:
    attended: Tensor           # B x C x H x W
    ca_map: Tensor             # B x D x H x W
    pa_map: Tensor             # B x D x H x W
    channel_affinity: Tensor   # B x D x D, rows sum to 1
    position_affinity: Tensor  # B x N x N, rows sum to 1


class CFA(Module):
    """Channel max pool -> shared Q/K/V -> channel and position attention -> fused -> recover.

    Q and K convs carry no bias because batch norm follows them. ``ca_scale``
    weights the channel map, ``pa_scale`` the position map; both start at 0 so the
    module is initially the pooled-features path only.
    """

    def __init__(self, cfg: CfaConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        d = cfg.reduced_channels
        self.q_conv = Conv2d(d, d, 1, rng, bias=False, dtype=dtype)
        self.q_bn = BatchNorm2d(d, dtype=dtype)
        self.k_conv = Conv2d(d, d, 1, rng, bias=False, dtype=dtype)
        self.k_bn = BatchNorm2d(d, dtype=dtype)
        self.v_conv = Conv2d(d, d, 1, rng, dtype=dtype)
        self.ca_scale = scalar_param(0.0, dtype)
        self.pa_scale = scalar_param(0.0, dtype)
        self.recover_bn = BatchNorm2d(d, dtype=dtype)
        self.recover_conv = Conv2d(d, cfg.in_channels, 1, rng, dtype=dtype)

    def forward(self, a: Tensor) -> CfaOutput:
        if a.shape[1] != self.cfg.in_channels:
            raise ValueError(f"CFA expects {self.cfg.in_channels} channels, got {a.shape[1]}")
        b, _, h, w = a.shape
        d, n = self.cfg.reduced_channels, h * w
        pooled = ops.channel_max_pool(a, self.cfg.pool_factor)
        q = relu(self.q_bn(self.q_conv(pooled))).reshape(b, d, n)
        k = relu(self.k_bn(self.k_conv(pooled))).reshape(b, d, n)
        v = self.v_conv(pooled).reshape(b, d, n)

        chan_aff = softmax(matmul(q, transpose(k, (0, 2, 1))), axis=-1)   # D x D
        pos_aff = softmax(matmul(transpose(k, (0, 2, 1)), q), axis=-1)   # N x N
        ca = matmul(chan_aff, v)                                          # D x N
        pa = matmul(v, transpose(pos_aff, (0, 2, 1)))                    # D x N, column j mixes row j of pos_aff

        ca4 = ca.reshape(b, d, h, w)
        pa4 = pa.reshape(b, d, h, w)
        fused = add(add(mul(self.ca_scale, ca4), mul(self.pa_scale, pa4)), pooled)
        attended = self.recover_conv(self.recover_bn(fused))
        return CfaOutput(attended, ca4, pa4, chan_aff, pos_aff)


class PamCam(Module):
    """Two independent attention branches, each with its own 3x3 reduce/restore convs.

    The position branch attends over the N spatial positions, the channel branch
    over the C/2 reduced channels; both results are added to the input.
    """

    reduction = 2

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        if channels % self.reduction:
            raise ValueError(f"channels {channels} not divisible by {self.reduction}")
        self.channels = channels
        d = channels // self.reduction
        self.pos_reduce = Conv2d(channels, d, 3, rng, bias=False, dtype=dtype)
        self.pos_bn = BatchNorm2d(d, dtype=dtype)
        self.pos_q = Conv2d(d, d, 1, rng, dtype=dtype)
        self.pos_k = Conv2d(d, d, 1, rng, dtype=dtype)
        self.pos_v = Conv2d(d, d, 1, rng, dtype=dtype)
        self.pos_scale = scalar_param(0.0, dtype)
        self.pos_restore = Conv2d(d, channels, 3, rng, dtype=dtype)

        self.chn_reduce = Conv2d(channels, d, 3, rng, bias=False, dtype=dtype)
        self.chn_bn = BatchNorm2d(d, dtype=dtype)
        self.chn_q = Conv2d(d, d, 1, rng, dtype=dtype)
        self.chn_k = Conv2d(d, d, 1, rng, dtype=dtype)
        self.chn_v = Conv2d(d, d, 1, rng, dtype=dtype)
        self.chn_scale = scalar_param(0.0, dtype)
        self.chn_restore = Conv2d(d, channels, 3, rng, dtype=dtype)

    def forward(self, a: Tensor) -> Tensor:
        b, _, h, w = a.shape
        d, n = self.channels // self.reduction, h * w

        r = relu(self.pos_bn(self.pos_reduce(a)))
        q = self.pos_q(r).reshape(b, d, n)
        k = self.pos_k(r).reshape(b, d, n)
        v = self.pos_v(r).reshape(b, d, n)
        pos_aff = softmax(matmul(transpose(k, (0, 2, 1)), q), axis=-1)
        pa = matmul(v, transpose(pos_aff, (0, 2, 1))).reshape(b, d, h, w)
        pos_out = self.pos_restore(add(mul(self.pos_scale, pa), r))

        r = relu(self.chn_bn(self.chn_reduce(a)))
        q = self.chn_q(r).reshape(b, d, n)
        k = self.chn_k(r).reshape(b, d, n)
        v = self.chn_v(r).reshape(b, d, n)
        chan_aff = softmax(matmul(q, transpose(k, (0, 2, 1))), axis=-1)
        ca = matmul(chan_aff, v).reshape(b, d, h, w)
        chn_out = self.chn_restore(add(mul(self.chn_scale, ca), r))

        return add(add(a, pos_out), chn_out)
