"""Gaussian and attention-derived masks, and the reconstruction targets they weight."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _wrap


@dataclass(frozen=True)
class GaussianMaskSpec:
    sigma_y_frac: float = 0.35
    sigma_x_frac: float = 0.25
    center: tuple[float, float] | None = None  # (cy, cx) in pixels; default (H/2, W/2)

    def __post_init__(self):
        for f in (self.sigma_y_frac, self.sigma_x_frac):
            if not 0 < f <= 1:
                raise ValueError(f"sigma fractions must lie in (0, 1], got {f}")


def gaussian_mask(h: int, w: int, spec: GaussianMaskSpec = GaussianMaskSpec(), dtype=np.float32) -> np.ndarray:
    """H x W person-centred prior, rescaled so the largest pixel is exactly 1."""
    if h < 1 or w < 1:
        raise ValueError("mask extents must be positive")
    sy, sx = spec.sigma_y_frac * h, spec.sigma_x_frac * w
    if sy <= 0 or sx <= 0:
        raise ValueError("sigma must be positive")
    cy, cx = spec.center if spec.center is not None else (h / 2, w / 2)
    y = np.arange(h, dtype=np.float64)[:, None]
    x = np.arange(w, dtype=np.float64)[None, :]
    g = np.exp(-((y - cy) ** 2 / (2 * sy**2) + (x - cx) ** 2 / (2 * sx**2)))
    return (g / g.max()).astype(dtype)


def bilinear_resize(maps: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resize of a (..., h, w) stack."""
    h, w = maps.shape[-2:]

    def axis_weights(n_in, n_out):
        if n_in == 1 or n_out == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        lo = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis_weights(h, out_h)
    x0, x1, fx = axis_weights(w, out_w)
    fy = fy[:, None]
    fx = fx[None, :]
    top = maps[..., y0, :][..., :, x0] * (1 - fx) + maps[..., y0, :][..., :, x1] * fx
    bot = maps[..., y1, :][..., :, x0] * (1 - fx) + maps[..., y1, :][..., :, x1] * fx
    return top * (1 - fy) + bot * fy


def spatialize(feat: np.ndarray, mode: str = "mean") -> np.ndarray:
    """B x D x h x w -> B x h x w, min-max normalized per image (flat maps -> 0.5)."""
    if mode == "mean":
        m = feat.mean(axis=1)
    elif mode == "max":
        m = feat.max(axis=1)
    else:
        raise ValueError(f"unknown spatialization mode {mode!r}")
    lo = m.min(axis=(1, 2), keepdims=True)
    hi = m.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    flat = span <= 0
    out = np.where(flat, 0.5, (m - lo) / np.where(flat, 1, span))
    return out


def attention_to_mask(feat, out_h: int, out_w: int, mode: str = "mean") -> Tensor:
    """Detached B x out_H x out_W mask in [0, 1] from a B x D x h x w feature map."""
    arr = feat.data if isinstance(feat, Tensor) else np.asarray(feat)
    h, w = arr.shape[-2:]
    if out_h < h or out_w < w:
        raise ValueError(f"cannot upsample {h}x{w} to smaller {out_h}x{out_w}")
    m = bilinear_resize(spatialize(arr, mode), out_h, out_w)
    return _wrap(np.clip(m, 0, 1).astype(arr.dtype))


class ReconStrategy(enum.Enum):
    """Reconstruction targets, keyed by their ablation letter."""

    NO_CFA_GM_ONLY = "a"
    PLAIN_INPUT = "b"
    GM_ONLY = "c"
    GM_PAM = "d"
    GM_CAM = "e"
    GM_PAM_CAM_NO_GRAD_LOSS = "f"
    GM_PAM_CAM = "g"

    @classmethod
    def from_letter(cls, letter: str) -> "ReconStrategy":
        return cls(letter.lower())

    @property
    def uses_cfa(self) -> bool:
        return self is not ReconStrategy.NO_CFA_GM_ONLY

    @property
    def uses_gradient_loss(self) -> bool:
        return self is not ReconStrategy.GM_PAM_CAM_NO_GRAD_LOSS

    @property
    def masks(self) -> tuple[str, ...]:
        return {
            "a": ("gm",), "b": (), "c": ("gm",), "d": ("gm", "pam"),
            "e": ("gm", "cam"), "f": ("gm", "pam", "cam"), "g": ("gm", "pam", "cam"),
        }[self.value]


@dataclass
class MaskSet:
    gm: np.ndarray                 # H x W
    pam: Tensor | None = None      # B x H x W
    cam: Tensor | None = None      # B x H x W

    def get(self, name: str) -> np.ndarray | None:
        m = getattr(self, name)
        if m is None:
            return None
        return m.data if isinstance(m, Tensor) else np.asarray(m)


def build_target(image: Tensor, strategy: ReconStrategy, masks: MaskSet) -> Tensor:
    """Image weighted by the product of the strategy's masks; carries no gradient."""
    img = image.data if isinstance(image, Tensor) else np.asarray(image)
    weight = None
    for name in strategy.masks:
        m = masks.get(name)
        if m is None:
            raise ValueError(f"strategy {strategy.name} needs mask {name!r}")
        m = m[None] if m.ndim == 2 else m
        weight = m if weight is None else weight * m
    if weight is None:
        return _wrap(img.copy())
    return _wrap((img * weight[:, None].astype(img.dtype)).astype(img.dtype))
