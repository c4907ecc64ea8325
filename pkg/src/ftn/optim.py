"""Adam with per-parameter state stored on :class:`~ftn.nn.Param`."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .nn import Param


def adam_step(params: Iterable[Param], lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; clears ``grad`` on every updated param."""
    params = list(params)
    missing = [p.name or repr(p) for p in params if p.grad is None]
    if missing:
        raise ValueError(f"adam_step: no gradient for {missing}")
    for p in params:
        g = p.grad
        p.adam_step += 1
        t = p.adam_step
        p.adam_m *= beta1
        p.adam_m += (1 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1 - beta2) * g * g
        m_hat = p.adam_m / (1 - beta1**t)
        v_hat = p.adam_v / (1 - beta2**t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
        p.grad = None
