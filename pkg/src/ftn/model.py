"""FTN assembly: staged residual encoder, CFA, global/local branches, heads and decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops
from .cfa import CFA, CfaConfig, CfaOutput
from .decoder import DecoderConfig, TFDecoder
from .masks import GaussianMaskSpec, MaskSet, attention_to_mask, gaussian_mask
from .nn import BatchNorm2d, Conv2d, Linear, Module
from .tensor import Tensor, add, as_tensor, concat, no_grad, relu


@dataclass(frozen=True)
class BackboneConfig:
    channels: tuple = (8, 16, 32, 64, 128)
    blocks: tuple = (1, 1, 1, 1, 1)
    strides: tuple = (2, 2, 2, 2, 1)

    def __post_init__(self):
        if not len(self.channels) == len(self.blocks) == len(self.strides) == 5:
            raise ValueError("backbone needs exactly five stages")
        if self.strides[-1] != 1:
            raise ValueError("stage_5 must keep stride 1")

    @property
    def stage4_factor(self) -> int:
        return int(np.prod(self.strides[:4]))


@dataclass(frozen=True)
class FtnConfig:
    num_classes: int
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    embed_dim: int = 64
    use_cfa: bool = True
    use_decoder: bool = True
    pool_factor: int = 2
    decoder_hidden: int = 64
    decoder_input: str = "stage4"   # or "cfa"
    pool_combine: str = "sum"       # GAP + GMP; or "concat"
    mask_mode: str = "mean"
    gaussian: GaussianMaskSpec = field(default_factory=GaussianMaskSpec)

    def __post_init__(self):
        if self.decoder_input not in ("stage4", "cfa"):
            raise ValueError(f"decoder_input must be 'stage4' or 'cfa', got {self.decoder_input!r}")
        if self.pool_combine not in ("sum", "concat"):
            raise ValueError(f"pool_combine must be 'sum' or 'concat', got {self.pool_combine!r}")
        if self.decoder_input == "cfa" and not self.use_cfa:
            raise ValueError("decoder_input='cfa' requires use_cfa")

    def decoder_config(self) -> DecoderConfig:
        ratio = 2
        n_blocks = int(round(np.log2(self.backbone.stage4_factor)))
        if ratio**n_blocks != self.backbone.stage4_factor:
            raise ValueError("stage_4 downsample factor must be a power of two")
        return DecoderConfig(self.backbone.channels[3], self.decoder_hidden, n_blocks, ratio)


DESK_DECODER_HIDDEN = 8


def config_for(strategy, num_classes: int, **overrides) -> FtnConfig:
    """Model layout for a reconstruction strategy; ``None`` means the decoder-free, CFA-free baseline."""
    if strategy is None:
        base = dict(use_cfa=False, use_decoder=False)
    else:
        base = dict(use_cfa=strategy.uses_cfa, use_decoder=True)
    base.update(overrides)
    return FtnConfig(num_classes=num_classes, **base)


def config_to_dict(cfg: FtnConfig) -> dict:
    return asdict(cfg)


def config_from_dict(obj: dict) -> FtnConfig:
    obj = dict(obj)
    if "backbone" in obj:
        obj["backbone"] = BackboneConfig(**{k: tuple(v) for k, v in obj["backbone"].items()})
    if "gaussian" in obj:
        g = dict(obj["gaussian"])
        if g.get("center") is not None:
            g["center"] = tuple(g["center"])
        obj["gaussian"] = GaussianMaskSpec(**g)
    return FtnConfig(**obj)


class BasicBlock(Module):
    def __init__(self, cin, cout, stride, rng, dtype):
        super().__init__()
        self.conv1 = Conv2d(cin, cout, 3, rng, stride=stride, bias=False, dtype=dtype)
        self.bn1 = BatchNorm2d(cout, dtype=dtype)
        self.conv2 = Conv2d(cout, cout, 3, rng, bias=False, dtype=dtype)
        self.bn2 = BatchNorm2d(cout, dtype=dtype)
        if stride != 1 or cin != cout:
            self.short_conv = Conv2d(cin, cout, 1, rng, stride=stride, pad=0, bias=False, dtype=dtype)
            self.short_bn = BatchNorm2d(cout, dtype=dtype)
        else:
            self.short_conv = self.short_bn = None

    def forward(self, x):
        out = self.bn2(self.conv2(relu(self.bn1(self.conv1(x)))))
        short = x if self.short_conv is None else self.short_bn(self.short_conv(x))
        return relu(add(out, short))


class Bottleneck(Module):
    """1x1 reduce, 3x3, 1x1 expand with identity shortcut."""

    def __init__(self, channels, rng, dtype, expansion=4):
        super().__init__()
        mid = max(1, channels // expansion)
        self.conv1 = Conv2d(channels, mid, 1, rng, bias=False, dtype=dtype)
        self.bn1 = BatchNorm2d(mid, dtype=dtype)
        self.conv2 = Conv2d(mid, mid, 3, rng, bias=False, dtype=dtype)
        self.bn2 = BatchNorm2d(mid, dtype=dtype)
        self.conv3 = Conv2d(mid, channels, 1, rng, bias=False, dtype=dtype)
        self.bn3 = BatchNorm2d(channels, dtype=dtype)

    def forward(self, x):
        out = relu(self.bn1(self.conv1(x)))
        out = relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return relu(add(out, x))


class Stage(Module):
    def __init__(self, cin, cout, n_blocks, stride, rng, dtype):
        super().__init__()
        self.blocks = [BasicBlock(cin if i == 0 else cout, cout, stride if i == 0 else 1, rng, dtype)
                       for i in range(n_blocks)]

    def forward(self, x):
        for blk in self.blocks:
            x = blk(x)
        return x


class Head(Module):
    """GAP and GMP combined, then a fully connected embedding and an identity classifier."""

    def __init__(self, cin, embed_dim, num_classes, combine, rng, dtype):
        super().__init__()
        self.combine = combine
        fin = cin if combine == "sum" else 2 * cin
        self.fc = Linear(fin, embed_dim, rng, dtype=dtype)
        self.classifier = Linear(embed_dim, num_classes, rng, dtype=dtype)

    def embed(self, fmap: Tensor) -> Tensor:
        gap, gmp = ops.global_avg_pool(fmap), ops.global_max_pool(fmap)
        pooled = add(gap, gmp) if self.combine == "sum" else concat([gap, gmp], axis=1)
        return self.fc(pooled)

    def forward(self, fmap: Tensor) -> tuple[Tensor, Tensor]:
        emb = self.embed(fmap)
        return emb, self.classifier(emb)


@dataclass
class ReidOutput:
    embeddings: list      # per branch, B x dim, order: [cfa,] global, local
    logits: list          # per branch, B x K
    cfa_out: CfaOutput | None
    f4: Tensor
    stages: list          # stage_1 .. stage_5 feature maps


@dataclass
class ReconOutput:
    recon: Tensor
    masks: MaskSet


class FTN(Module):
    def __init__(self, cfg: FtnConfig, seed: int = 0, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        bb = cfg.backbone
        cins = (3,) + tuple(bb.channels[:-1])
        self.stages = [Stage(ci, co, nb, st, rng, dtype)
                       for ci, co, nb, st in zip(cins, bb.channels, bb.blocks, bb.strides)]
        self.local_block = Bottleneck(bb.channels[4], rng, dtype)
        self.cfa = CFA(CfaConfig(bb.channels[3], cfg.pool_factor), rng, dtype) if cfg.use_cfa else None
        self.cfa_head = (Head(bb.channels[3], cfg.embed_dim, cfg.num_classes, cfg.pool_combine, rng, dtype)
                         if cfg.use_cfa else None)
        self.global_head = Head(bb.channels[4], cfg.embed_dim, cfg.num_classes, cfg.pool_combine, rng, dtype)
        self.local_head = Head(bb.channels[4], cfg.embed_dim, cfg.num_classes, cfg.pool_combine, rng, dtype)
        self.decoder = TFDecoder(cfg.decoder_config(), rng, dtype) if cfg.use_decoder else None
        self.assign_names()

    # parameter groups ---------------------------------------------------
    def backbone_parameters(self) -> list:
        out = []
        for s in self.stages:
            out += s.parameters()
        return out + self.local_block.parameters()

    def encoder_parameters(self) -> list:
        """Stages 1-4: the part of the encoder on the decoder's input path."""
        out = []
        for s in self.stages[:4]:
            out += s.parameters()
        return out

    def head_parameters(self) -> list:
        heads = [h for h in (self.cfa_head, self.global_head, self.local_head) if h is not None]
        return [p for h in heads for p in h.parameters()]

    def cfa_parameters(self) -> list:
        return self.cfa.parameters() if self.cfa is not None else []

    def decoder_parameters(self) -> list:
        return self.decoder.parameters() if self.decoder is not None else []

    @property
    def embedding_width(self) -> int:
        return self.cfg.embed_dim * (3 if self.cfg.use_cfa else 2)

    # forward passes ---------------------------------------------------
    def _input(self, images) -> Tensor:
        x = as_tensor(images)
        if x.dtype != self.dtype:
            x = as_tensor(x.data.astype(self.dtype))
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"images must be B x 3 x H x W, got {x.shape}")
        f = self.cfg.backbone.stage4_factor
        if x.shape[2] % f or x.shape[3] % f:
            raise ValueError(f"image size {x.shape[2:]} not divisible by the stage_4 factor {f}")
        return x

    def encode(self, images) -> list:
        x = self._input(images)
        feats = []
        for s in self.stages:
            x = s(x)
            feats.append(x)
        return feats

    def forward_reid(self, images) -> ReidOutput:
        feats = self.encode(images)
        f4, f5 = feats[3], feats[4]
        embs, logits = [], []
        cfa_out = None
        if self.cfa is not None:
            cfa_out = self.cfa(f4)
            e, l = self.cfa_head(cfa_out.attended)
            embs.append(e)
            logits.append(l)
        e, l = self.global_head(f5)
        embs.append(e)
        logits.append(l)
        e, l = self.local_head(self.local_block(f5))
        embs.append(e)
        logits.append(l)
        return ReidOutput(embs, logits, cfa_out, f4, feats)

    forward = forward_reid

    def build_masks(self, f4: Tensor, h: int, w: int, cfa_out: CfaOutput | None = None) -> MaskSet:
        gm = gaussian_mask(h, w, self.cfg.gaussian, self.dtype)
        if self.cfa is None:
            return MaskSet(gm)
        if cfa_out is None:
            with no_grad():
                cfa_out = self.cfa(f4.detach())
        return MaskSet(gm,
                       pam=attention_to_mask(cfa_out.pa_map, h, w, self.cfg.mask_mode),
                       cam=attention_to_mask(cfa_out.ca_map, h, w, self.cfg.mask_mode))

    def forward_recon(self, images) -> ReconOutput:
        if self.decoder is None:
            raise RuntimeError("model was built without a decoder")
        x = self._input(images)
        feats = self.encode(x)
        f4 = feats[3]
        h, w = x.shape[2:]
        if self.cfg.decoder_input == "cfa":
            cfa_out = self.cfa(f4)
            recon = self.decoder(cfa_out.attended)
            masks = self.build_masks(f4, h, w, cfa_out)
        else:
            masks = self.build_masks(f4, h, w)
            recon = self.decoder(f4)
        return ReconOutput(recon, masks)


def forward_reid(model: FTN, images) -> ReidOutput:
    return model.forward_reid(images)


def forward_recon(model: FTN, images) -> ReconOutput:
    return model.forward_recon(images)


def embed(model: FTN, images, batch_size: int = 64) -> np.ndarray:
    """Concatenated branch embeddings in eval mode; never evaluates the decoder."""
    was_training = model.training
    model.eval()
    try:
        images = images.data if isinstance(images, Tensor) else np.asarray(images)
        chunks = []
        with no_grad():
            for i in range(0, len(images), batch_size):
                out = model.forward_reid(images[i : i + batch_size])
                chunks.append(np.concatenate([e.data for e in out.embeddings], axis=1))
        return np.concatenate(chunks, axis=0)
    finally:
        model.train(was_training)
