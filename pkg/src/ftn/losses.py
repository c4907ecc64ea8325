"""Re-ID and reconstruction losses and their weighted combination."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .tensor import (ShapeError, Tensor, abs_, add, getitem, log_softmax, mean, relu, reshape,
                     scale, sqrt, square, sub, sum_)


@dataclass(frozen=True)
class LossWeights:
    ce: float = 1.0
    triplet: float = 0.1
    gradient: float = 0.0
    l1: float = 0.0

    def __post_init__(self):
        if min(self.ce, self.triplet, self.gradient, self.l1) < 0:
            raise ValueError("loss weights must be non-negative")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.ce, self.triplet, self.gradient, self.l1)


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"expected {b} labels, got {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    picked = getitem(log_softmax(logits, axis=1), (np.arange(b), labels))
    return scale(mean(picked), -1.0)


def pairwise_distances(emb: Tensor) -> Tensor:
    """Euclidean distance matrix from explicit differences (exact zeros on coincident rows)."""
    n, d = emb.shape
    diff = sub(reshape(emb, (n, 1, d)), reshape(emb, (1, n, d)))
    return sqrt(sum_(square(diff), axis=2))


def hard_triplet(embeddings: Tensor, ids: Sequence[int], margin: float = 0.3) -> Tensor:
    """Batch-hard triplet loss with hinge, averaged over anchors."""
    ids = np.asarray(ids)
    n = embeddings.shape[0]
    if ids.shape != (n,):
        raise ShapeError(f"expected {n} ids, got {ids.shape}")
    uniq, counts = np.unique(ids, return_counts=True)
    if len(uniq) < 2:
        raise ValueError("hard_triplet needs at least two identities")
    if counts.min() < 2:
        raise ValueError("every identity needs at least two instances")

    dist = pairwise_distances(embeddings)
    same = ids[:, None] == ids[None, :]
    dd = dist.data
    # argmax/argmin pick the first index on ties
    hp_idx = np.where(same, dd, -np.inf).argmax(axis=1)
    hn_idx = np.where(~same, dd, np.inf).argmin(axis=1)
    rows = np.arange(n)
    hp = getitem(dist, (rows, hp_idx))
    hn = getitem(dist, (rows, hn_idx))
    return mean(relu(add(sub(hp, hn), margin)))


@dataclass
class GradientMaps:
    gh: Tensor  # B x H x (W-1)
    gv: Tensor  # B x (H-1) x W


def image_gradients(img: Tensor, per_channel: bool = False) -> GradientMaps:
    """Squared forward differences, summed over colour channels unless ``per_channel``."""
    if img.ndim != 4:
        raise ShapeError(f"expected B x C x H x W, got {img.shape}")
    h, w = img.shape[2:]
    if h < 2 or w < 2:
        raise ShapeError("image_gradients needs H, W >= 2")
    dh = square(sub(getitem(img, (slice(None), slice(None), slice(None), slice(1, None))),
                    getitem(img, (slice(None), slice(None), slice(None), slice(None, -1)))))
    dv = square(sub(getitem(img, (slice(None), slice(None), slice(1, None))),
                    getitem(img, (slice(None), slice(None), slice(None, -1)))))
    if per_channel:
        return GradientMaps(dh, dv)
    return GradientMaps(sum_(dh, axis=1), sum_(dv, axis=1))


def gradient_loss(recon: Tensor, target: Tensor, per_channel: bool = False) -> Tensor:
    """Mean-absolute discrepancy of horizontal plus vertical gradient maps, averaged over the batch."""
    if recon.shape != target.shape:
        raise ShapeError(f"shape mismatch {recon.shape} vs {target.shape}")
    r = image_gradients(recon, per_channel)
    g = image_gradients(target, per_channel)
    # equal-sized maps per image, so the per-image means averaged over the batch is the global mean
    return add(mean(abs_(sub(r.gh, g.gh))), mean(abs_(sub(r.gv, g.gv))))


def l1_loss(recon: Tensor, target: Tensor) -> Tensor:
    if recon.shape != target.shape:
        raise ShapeError(f"shape mismatch {recon.shape} vs {target.shape}")
    return mean(abs_(sub(recon, target)))


def total_loss(parts: Mapping[str, Tensor | float | None], w: LossWeights):
    """Weighted sum of ``ce``, ``triplet``, ``gradient`` and ``l1``; absent parts need a zero weight."""
    total = None
    for key in ("ce", "triplet", "gradient", "l1"):
        weight = getattr(w, key)
        part = parts.get(key)
        if part is None:
            if weight != 0:
                raise ValueError(f"loss part {key!r} missing but its weight is {weight}")
            continue
        if weight == 0:
            continue
        term = scale(part, weight) if isinstance(part, Tensor) else weight * float(part)
        if total is None:
            total = term
        elif isinstance(term, Tensor) or isinstance(total, Tensor):
            total = add(total, term)
        else:
            total = total + term
    return 0.0 if total is None else total
