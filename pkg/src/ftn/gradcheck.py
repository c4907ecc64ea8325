"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import ShapeError, Tensor


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Worst relative error between backprop and central differences.

    ``f`` is re-evaluated from scratch for every perturbed coordinate and must
    return a scalar tensor. Params with ``requires_grad`` false are skipped.
    When ``max_coords`` is set, at most that many coordinates per param are
    sampled with a fixed seed. The error denominator is
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError(f"eps {eps} outside [1e-6, 1e-4]")
    active = [p for p in params if p.requires_grad]
    for p in active:
        if p.dtype != np.float64:
            raise TypeError("grad_check requires 64-bit parameters")
        p.grad = None
    out = f()
    if out.size != 1:
        raise ShapeError(f"grad_check needs a scalar objective, got shape {out.shape}")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in active]
    for p in active:
        p.grad = None

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(active, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            ana = float(a.reshape(-1)[i])
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
