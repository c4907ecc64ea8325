"""Alternating Re-ID / reconstruction training with warm-up and step LR decay."""

from __future__ import annotations

import contextlib
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .data import Dataset
from .losses import LossWeights, cross_entropy, gradient_loss, hard_triplet, l1_loss, total_loss
from .masks import ReconStrategy, build_target
from .model import FTN
from .optim import adam_step
from .tensor import Tensor, add, as_tensor, concat, no_grad

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSchedule:
    warmup_epochs: int = 3
    group_size: int = 3
    reid_weights: LossWeights = LossWeights(1.0, 0.1, 0.0, 0.0)
    recon_weights: LossWeights = LossWeights(0.0, 0.0, 1.0, 1.0)
    lr0: float = 3.5e-4
    lr_milestones: tuple = (25, 40, 45)
    lr_gamma: float = 0.1
    ids_per_batch: int = 4
    instances: int = 4
    epochs: int = 50
    batches_per_epoch: int = 4
    margin: float = 0.3
    triplet_mode: str = "concat"     # or "per_branch"
    augment: bool = True

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be at least 2")
        if self.triplet_mode not in ("concat", "per_branch"):
            raise ValueError(f"unknown triplet_mode {self.triplet_mode!r}")
        if self.batches_per_epoch < 1:
            raise ValueError("batches_per_epoch must be positive")

    def phase(self, index: int) -> int:
        return index % self.group_size

    def is_recon_phase(self, index: int) -> bool:
        return self.phase(index) == self.group_size - 1

    def weights_for(self, index: int) -> LossWeights:
        return self.recon_weights if self.is_recon_phase(index) else self.reid_weights

    def epoch_of(self, index: int) -> int:
        return index // self.batches_per_epoch

    def in_warmup(self, index: int) -> bool:
        return self.epoch_of(index) < self.warmup_epochs

    def lr_at(self, index: int) -> float:
        epoch = self.epoch_of(index)
        drops = sum(1 for m in self.lr_milestones if epoch >= m)
        return self.lr0 * self.lr_gamma**drops

    @property
    def total_steps(self) -> int:
        return self.epochs * self.batches_per_epoch

    @staticmethod
    def coerce(obj: dict) -> dict:
        """JSON lists -> the tuple / LossWeights field types."""
        obj = dict(obj)
        for key in ("reid_weights", "recon_weights"):
            if key in obj:
                obj[key] = LossWeights(*obj[key])
        if "lr_milestones" in obj:
            obj["lr_milestones"] = tuple(obj["lr_milestones"])
        return obj

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainSchedule":
        return cls(**cls.coerce(obj))


DESK_STEPS = 600
DESK_LR = 1e-3


def desk_schedule(steps: int = DESK_STEPS, batches_per_epoch: int = 4, lr0: float = DESK_LR,
                  **overrides) -> TrainSchedule:
    """Short single-core schedule: same warm-up and alternation, LR drops at 60% and 85% of the run."""
    epochs = max(1, steps // batches_per_epoch)
    milestones = (int(epochs * 0.6), int(epochs * 0.85))
    return replace(TrainSchedule(lr0=lr0, epochs=epochs, batches_per_epoch=batches_per_epoch,
                                 lr_milestones=milestones), **TrainSchedule.coerce(overrides))


@dataclass
class Batch:
    images: np.ndarray
    labels: np.ndarray
    cams: np.ndarray


def random_erase(img: np.ndarray, rng: np.random.Generator, area=(0.02, 0.2), fill: float = 0.5,
                 attempts: int = 10) -> np.ndarray:
    _, h, w = img.shape
    for _ in range(attempts):
        target = rng.uniform(*area) * h * w
        aspect = np.exp(rng.uniform(np.log(0.3), np.log(1 / 0.3)))
        eh = int(round(np.sqrt(target * aspect)))
        ew = int(round(np.sqrt(target / aspect)))
        if 0 < eh < h and 0 < ew < w:
            y = rng.integers(0, h - eh + 1)
            x = rng.integers(0, w - ew + 1)
            img = img.copy()
            img[:, y : y + eh, x : x + ew] = fill
            return img
    return img


def pk_sampler(dataset: Dataset, E: int, M: int, rng: np.random.Generator, augment: bool = True) -> Batch:
    """E identities x M instances, grouped by identity.

    Identities with fewer than M images are sampled with replacement.
    Augmentation: horizontal flip (p=0.5), random erasing (p=0.5, 2-20% area, fill 0.5).
    """
    uniq = np.unique(dataset.ids)
    if len(uniq) < E:
        raise ValueError(f"need at least {E} identities, dataset has {len(uniq)}")
    chosen = rng.choice(uniq, size=E, replace=False)
    idx = []
    for ident in chosen:
        pool = np.flatnonzero(dataset.ids == ident)
        idx.extend(rng.choice(pool, size=M, replace=len(pool) < M))
    idx = np.array(idx)
    images = dataset.images[idx].copy()
    if augment:
        for i in range(len(images)):
            if rng.random() < 0.5:
                images[i] = images[i][:, :, ::-1]
            if rng.random() < 0.5:
                images[i] = random_erase(images[i], rng)
    return Batch(images, dataset.ids[idx].copy(), dataset.cams[idx].copy())


@contextlib.contextmanager
def trainable(model: FTN, params: Iterable):
    """Temporarily restrict ``requires_grad`` to ``params``."""
    keep = {id(p) for p in params}
    saved = [(p, p.requires_grad) for p in model.parameters()]
    for p, _ in saved:
        p.requires_grad = id(p) in keep
    try:
        yield
    finally:
        for p, flag in saved:
            p.requires_grad = flag


def reid_loss(model: FTN, images, labels, schedule: TrainSchedule, weights: LossWeights) -> Tensor:
    out = model.forward_reid(images)
    ce = None
    for logit in out.logits:
        term = cross_entropy(logit, labels)
        ce = term if ce is None else add(ce, term)
    if schedule.triplet_mode == "concat":
        tri = hard_triplet(concat(out.embeddings, axis=1), labels, schedule.margin)
    else:
        tri = None
        for emb in out.embeddings:
            term = hard_triplet(emb, labels, schedule.margin)
            tri = term if tri is None else add(tri, term)
    return total_loss({"ce": ce, "triplet": tri}, weights)


def recon_loss(model: FTN, images, strategy: ReconStrategy, weights: LossWeights) -> Tensor:
    out = model.forward_recon(images)
    target = build_target(as_tensor(images), strategy, out.masks)
    if not strategy.uses_gradient_loss:
        weights = replace(weights, gradient=0.0)
    parts = {"l1": l1_loss(out.recon, target)}
    if weights.gradient:
        parts["gradient"] = gradient_loss(out.recon, target)
    return total_loss(parts, weights)


def train_step(model: FTN, batch: Batch, global_batch_index: int, schedule: TrainSchedule,
               strategy: ReconStrategy | None) -> dict:
    """One optimizer step. ``strategy=None`` trains the decoder-free baseline (Re-ID on every batch)."""
    phase = schedule.phase(global_batch_index)
    warm = schedule.in_warmup(global_batch_index)
    lr = schedule.lr_at(global_batch_index)
    recon = schedule.is_recon_phase(global_batch_index) and strategy is not None and model.decoder is not None
    weights = schedule.recon_weights if recon else schedule.reid_weights
    images = batch.images.astype(model.dtype)

    if recon:
        if warm:
            allowed = []
        else:
            allowed = model.decoder_parameters() + model.encoder_parameters()
            if model.cfg.decoder_input == "cfa":
                allowed += model.cfa_parameters()
    else:
        allowed = model.head_parameters() + model.cfa_parameters()
        if not warm:
            dec = {id(p) for p in model.decoder_parameters()}
            allowed = [p for p in model.parameters() if id(p) not in dec]

    model.train()
    model.zero_grad()
    if not allowed:
        with no_grad():
            loss = recon_loss(model, images, strategy, weights) if recon else \
                reid_loss(model, images, batch.labels, schedule, weights)
        return {"loss": float(loss.item()), "phase": phase, "weights": weights.as_tuple(),
                "lr": lr, "updated": 0}

    with trainable(model, allowed):
        if recon:
            loss = recon_loss(model, images, strategy, weights)
        else:
            loss = reid_loss(model, images, batch.labels, schedule, weights)
        loss.backward()
    stepped = [p for p in allowed if p.grad is not None]
    adam_step(stepped, lr)
    model.zero_grad()
    return {"loss": float(loss.item()), "phase": phase, "weights": weights.as_tuple(),
            "lr": lr, "updated": len(stepped)}


def relabel(ids: np.ndarray) -> tuple[np.ndarray, dict]:
    uniq = np.unique(ids)
    mapping = {int(u): i for i, u in enumerate(uniq)}
    return np.array([mapping[int(i)] for i in ids]), mapping


def train(model: FTN, data: Dataset, schedule: TrainSchedule, strategy: ReconStrategy | None,
          seed: int, steps: int | None = None, log: Callable[[dict], None] | None = None) -> list:
    """Run the alternating schedule over ``data`` (expected to be the training split)."""
    labels, _ = relabel(data.ids)
    train_set = Dataset(data.images, labels, data.cams, data.splits, data.masks, data.files)
    if model.cfg.num_classes < len(np.unique(labels)):
        raise ValueError("model has fewer classes than training identities")
    rng = np.random.default_rng(seed)
    n = schedule.total_steps if steps is None else steps
    history = []
    for k in range(n):
        batch = pk_sampler(train_set, schedule.ids_per_batch, schedule.instances, rng, schedule.augment)
        res = train_step(model, batch, k, schedule, strategy)
        rec = {"step": k, "phase": res["phase"], "loss": res["loss"], "lr": res["lr"]}
        history.append(rec)
        if log is not None:
            log(rec)
        if k % 50 == 0:
            logger.info("step %d phase %d loss %.4f", k, res["phase"], res["loss"])
    return history


def jsonl_logger(fh) -> Callable[[dict], None]:
    def write(rec: dict) -> None:
        fh.write(json.dumps(rec) + "\n")

    return write
