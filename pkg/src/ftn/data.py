"""Deterministic synthetic Re-ID data: striped silhouettes on identity-independent backgrounds."""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .pnm import read_pgm, read_ppm, write_pgm, write_ppm

PALETTE = np.array([
    [0.90, 0.10, 0.10],
    [0.10, 0.75, 0.15],
    [0.15, 0.25, 0.95],
    [0.95, 0.85, 0.10],
    [0.85, 0.15, 0.85],
    [0.10, 0.85, 0.85],
    [0.98, 0.55, 0.05],
    [0.95, 0.95, 0.95],
])
STRIPE_WIDTHS = (2, 3, 4)
ORIENTATIONS = ("horizontal", "vertical", "diagonal")
_TEXTURE_ORDER_SEED = 1501


@dataclass(frozen=True)
class Texture:
    color_a: int
    color_b: int
    width: int
    orientation: str


def _all_textures() -> list[Texture]:
    combos = [Texture(a, b, w, o)
              for (a, b) in itertools.permutations(range(len(PALETTE)), 2)
              for w in STRIPE_WIDTHS for o in ORIENTATIONS]
    order = np.random.default_rng(_TEXTURE_ORDER_SEED).permutation(len(combos))
    return [combos[i] for i in order]


_TEXTURES = _all_textures()
MAX_IDS = len(_TEXTURES)


def texture_for(identity: int) -> Texture:
    """Fixed, injective identity -> stripe texture mapping (independent of the dataset seed)."""
    if not 0 <= identity < MAX_IDS:
        raise ValueError(f"identity must lie in [0, {MAX_IDS})")
    return _TEXTURES[identity]


@dataclass(frozen=True)
class Jitter:
    dy: float = 0.0
    dx: float = 0.0
    scale: float = 1.0
    brightness: float = 1.0


def silhouette(h: int, w: int, jitter: Jitter = Jitter()) -> np.ndarray:
    """Boolean H x W mask: an ellipse torso above two rectangular legs."""
    y = np.arange(h)[:, None] + 0.5
    x = np.arange(w)[None, :] + 0.5
    s = jitter.scale
    cx = w / 2 + jitter.dx
    ty, ry, rx = 0.36 * h + jitter.dy, 0.24 * h * s, 0.34 * w * s
    torso = ((y - ty) / ry) ** 2 + ((x - cx) / rx) ** 2 <= 1.0
    leg_top = ty + 0.12 * h * s
    leg_bot = leg_top + 0.42 * h * s
    in_rows = (y >= leg_top) & (y < leg_bot)
    off_in, off_out = 0.03 * w * s, 0.20 * w * s
    legs = in_rows & (((x >= cx - off_out) & (x < cx - off_in)) | ((x >= cx + off_in) & (x < cx + off_out)))
    return torso | legs


def stripes(h: int, w: int, tex: Texture, jitter: Jitter = Jitter()) -> np.ndarray:
    """3 x H x W two-colour stripe field anchored to the figure."""
    y = np.arange(h)[:, None] - (0.12 * h + jitter.dy)
    x = np.arange(w)[None, :] - (w / 2 + jitter.dx)
    if tex.orientation == "horizontal":
        u = y + 0 * x
    elif tex.orientation == "vertical":
        u = x + 0 * y
    else:
        u = x + y
    band = (np.floor(u / (tex.width * jitter.scale)).astype(int) % 2).astype(bool)
    a, b = PALETTE[tex.color_a], PALETTE[tex.color_b]
    return np.where(band[None], b[:, None, None], a[:, None, None])


def background(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Solid, linear-gradient or noise field, 3 x H x W."""
    style = rng.integers(3)
    if style == 0:
        return np.broadcast_to(rng.uniform(0, 1, 3)[:, None, None], (3, h, w)).copy()
    if style == 1:
        c0, c1 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
        t = np.linspace(0, 1, h)[:, None] * np.ones((1, w)) if rng.integers(2) else np.ones((h, 1)) * np.linspace(0, 1, w)[None]
        return c0[:, None, None] * (1 - t) + c1[:, None, None] * t
    base = rng.uniform(0.2, 0.8, 3)
    return np.clip(base[:, None, None] + rng.uniform(-0.2, 0.2, (3, h, w)), 0, 1)


def render(identity: int, bg: np.ndarray, jitter: Jitter) -> tuple[np.ndarray, np.ndarray]:
    _, h, w = bg.shape
    mask = silhouette(h, w, jitter)
    img = np.where(mask[None], stripes(h, w, texture_for(identity), jitter), bg)
    return np.clip(img * jitter.brightness, 0, 1), mask


def random_jitter(h: int, w: int, rng: np.random.Generator) -> Jitter:
    return Jitter(dy=rng.uniform(-0.1, 0.1) * h, dx=rng.uniform(-0.1, 0.1) * w,
                  scale=rng.uniform(0.9, 1.1), brightness=rng.uniform(0.9, 1.1))


@dataclass
class SyntheticSpec:
    num_ids: int = 8
    imgs_per_id: int = 8
    image_size: tuple = (64, 32)
    num_cameras: int = 3
    split: str = "train"        # "train": every row trains; "disjoint": id halves train / test
    queries_per_id: int = 1     # test ids under "disjoint"

    def __post_init__(self):
        self.image_size = tuple(self.image_size)
        if self.num_ids < 2 or self.imgs_per_id < 2:
            raise ValueError("need num_ids >= 2 and imgs_per_id >= 2")
        if self.num_cameras < 2:
            raise ValueError("need at least two cameras")
        if self.split not in ("train", "disjoint"):
            raise ValueError(f"split must be 'train' or 'disjoint', got {self.split!r}")
        if self.num_ids > MAX_IDS:
            raise ValueError(f"at most {MAX_IDS} distinct textures")

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticSpec":
        return cls(**obj)


@dataclass
class Dataset:
    images: np.ndarray            # N x 3 x H x W float32 in [0, 1]
    ids: np.ndarray
    cams: np.ndarray
    splits: np.ndarray            # "train" / "query" / "gallery"
    masks: np.ndarray             # N x H x W bool silhouettes
    files: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, sel) -> "Dataset":
        sel = np.asarray(sel)
        files = [self.files[i] for i in np.flatnonzero(sel)] if sel.dtype == bool else [self.files[i] for i in sel]
        return Dataset(self.images[sel], self.ids[sel], self.cams[sel], self.splits[sel], self.masks[sel], files)

    def split(self, name: str) -> "Dataset":
        return self.subset(self.splits == name)


def synthesize(spec: SyntheticSpec, seed: int) -> Dataset:
    """Render the full dataset in memory. Every image has its own derived RNG stream."""
    h, w = spec.image_size
    imgs, masks, ids, cams, splits, files = [], [], [], [], [], []
    n_train_ids = spec.num_ids if spec.split == "train" else spec.num_ids // 2
    for ident in range(spec.num_ids):
        for k in range(spec.imgs_per_id):
            rng = np.random.default_rng([seed, ident, k])
            bg = background(h, w, rng)
            img, m = render(ident, bg, random_jitter(h, w, rng))
            cam = int(rng.integers(spec.num_cameras))
            if ident < n_train_ids:
                sp = "train"
            else:
                sp = "query" if k < spec.queries_per_id else "gallery"
            imgs.append(img)
            masks.append(m)
            ids.append(ident)
            cams.append(cam)
            splits.append(sp)
            files.append(f"images/{ident:04d}_{k:03d}.ppm")
    return Dataset(np.stack(imgs).astype(np.float32), np.array(ids), np.array(cams),
                   np.array(splits), np.stack(masks), files)


def generate_dataset(spec: SyntheticSpec, seed: int, out_dir) -> Path:
    """Write images (PPM), silhouettes (PGM), manifest.json and spec.json under ``out_dir``."""
    out = Path(out_dir)
    ds = synthesize(spec, seed)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc
    rows = []
    for i, rel in enumerate(ds.files):
        mask_rel = rel.replace("images/", "masks/").replace(".ppm", ".pgm")
        try:
            write_ppm(out / rel, ds.images[i])
            write_pgm(out / mask_rel, ds.masks[i].astype(np.float64))
        except OSError as exc:
            raise OSError(f"failed writing {out / rel}: {exc}") from exc
        rows.append({"file": rel, "id": int(ds.ids[i]), "cam": int(ds.cams[i]),
                     "split": str(ds.splits[i]), "mask": mask_rel})
    (out / "manifest.json").write_text(json.dumps(rows, indent=1))
    (out / "spec.json").write_text(json.dumps({"seed": seed, **asdict(spec)}, indent=1))
    return out


def load_dataset(data_dir) -> Dataset:
    root = Path(data_dir)
    manifest = root / "manifest.json"
    try:
        rows = json.loads(manifest.read_text())
    except OSError as exc:
        raise OSError(f"cannot read manifest {manifest}: {exc}") from exc
    imgs = [read_ppm(root / r["file"]) for r in rows]
    masks = [read_pgm(root / r["mask"]) > 0.5 if "mask" in r else np.ones(imgs[0].shape[1:], bool)
             for r in rows]
    return Dataset(np.stack(imgs), np.array([r["id"] for r in rows]), np.array([r["cam"] for r in rows]),
                   np.array([r["split"] for r in rows]), np.stack(masks), [r["file"] for r in rows])


def query_gallery(ds: Dataset) -> tuple[Dataset, Dataset]:
    """Explicit query/gallery rows when present, else the first image of each id queries the rest."""
    if (ds.splits == "query").any():
        return ds.split("query"), ds.split("gallery")
    first = np.zeros(len(ds), bool)
    for ident in np.unique(ds.ids):
        first[np.flatnonzero(ds.ids == ident)[0]] = True
    return ds.subset(first), ds.subset(~first)
