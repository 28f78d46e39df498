"""Full segmentation network and its training loss, with ablation switches."""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import nn
from .backbone import RGB, THERMAL, TwoBranchBackbone
from .decoder import Decoder
from .fdam import DecoupleLossTerms, downsample_labels, FDAMStage, IlluminationRouter, OffsetField
from .objective import LossReport, LossWeights, dis_loss, kg_sparsity, ohem_ce, total_loss
from .sgcm import SGCM, identity_prior
from .tensor import Tensor, as_tensor, concat

PIXEL_MEAN, PIXEL_STD = 0.5, 0.25


@dataclass
class Ablation:
    fdam: bool = True
    afd_losses: bool = True
    iaa: bool = True
    a_h: bool = True
    a_c: bool = True
    a_delta: bool = True
    sgcm: bool = True

    @classmethod
    def baseline(cls) -> "Ablation":
        return cls(fdam=False, afd_losses=False, iaa=False, sgcm=False)

    def as_dict(self) -> dict[str, bool]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class ModelConfig:
    channels: tuple[int, ...] = (16, 32, 48, 64)
    embed_dim: int = 64
    num_classes: int = 12
    norm: str = "batch"
    gamma: float = 0.85
    heads: int = 4
    router_hidden: int = 16
    taxonomy: str = ""          # path, empty = built-in toy taxonomy

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != 4:
            raise ValueError(f"need 4 stage widths, got {self.channels}")


@dataclass
class ModelOutput:
    logits: Tensor                    # [B, K, H/4, W/4], calibrated when SGCM is on
    base_logits: Tensor
    lam: Tensor | None                # [B]
    decoupled: list = field(default_factory=list)
    offsets: list[tuple[OffsetField, ...]] = field(default_factory=list)
    a_delta: Tensor | None = None


def normalize_images(rgb: np.ndarray, thermal: np.ndarray, dtype) -> tuple[Tensor, Tensor]:
    r = (np.asarray(rgb, dtype=np.float64) / 255.0 - PIXEL_MEAN) / PIXEL_STD
    t = (np.asarray(thermal, dtype=np.float64) / 255.0 - PIXEL_MEAN) / PIXEL_STD
    return Tensor(r, dtype=dtype), Tensor(t, dtype=dtype)


class SegModel(nn.Module):
    def __init__(self, cfg: ModelConfig, ablation: Ablation | None = None,
                 a_p: np.ndarray | None = None, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.ablation = ablation = ablation or Ablation()
        K, D = cfg.num_classes, cfg.embed_dim
        self.backbone = TwoBranchBackbone(cfg.channels, cfg.norm, rng)
        if ablation.fdam:
            self.router = IlluminationRouter(cfg.router_hidden, rng)
            self.stages = [FDAMStage(c, K, cfg.norm, ablation.iaa, rng) for c in cfg.channels]
            widths = [3 * c for c in cfg.channels]
        else:
            self.router = None
            self.stages = []
            widths = [2 * c for c in cfg.channels]
        self.decoder = Decoder(widths, D, K, cfg.norm, rng)
        if ablation.sgcm:
            a_p = identity_prior(K) if a_p is None else a_p
            self.sgcm = SGCM(K, D, a_p, cfg.heads, cfg.gamma, ablation.a_delta, rng)
        else:
            self.sgcm = None

    def forward(self, rgb, thermal) -> ModelOutput:
        rgb, thermal = as_tensor(rgb), as_tensor(thermal)
        pr = self.backbone.encode(rgb, RGB)
        pt = self.backbone.encode(thermal, THERMAL)
        lam = self.router(rgb) if self.router is not None else None
        fused, decs, offs = [], [], []
        if self.stages:
            for stage, fr, ft in zip(self.stages, pr.stages, pt.stages):
                f, dec, al = stage(fr, ft, lam)
                fused.append(f)
                decs.append(dec)
                offs.append(al.fields)
        else:
            fused = [concat([fr, ft], axis=1) for fr, ft in zip(pr.stages, pt.stages)]
        out = self.decoder(fused)
        logits, a_delta = out.base_logits, None
        if self.sgcm is not None:
            s = self.sgcm(out.f_fuse, out.base_logits)
            logits, a_delta = s.logits, self.sgcm.a_delta
        return ModelOutput(logits, out.base_logits, lam, decs, offs, a_delta)

    def predict(self, rgb, thermal, size: tuple[int, int] | None = None) -> np.ndarray:
        """Arg-max labels at ``size`` (default: input size) via bilinear logit upsampling."""
        out = self.forward(rgb, thermal)
        size = size or as_tensor(rgb).shape[2:]
        return nn.resize_bilinear(out.logits, size).data.argmax(axis=1)


def seg_logits(out: ModelOutput, size: tuple[int, int] | None) -> Tensor:
    return nn.resize_bilinear(out.logits, size) if size is not None else out.logits


def model_loss(model: SegModel, out: ModelOutput, labels: np.ndarray, w: LossWeights,
               full_resolution: bool = True, kept: np.ndarray | None = None,
               tau: float = 0.07, kernel: int = 8) -> LossReport:
    """seg (OHEM) + lambda_dis * dis + lambda_kg * kg, each term present only when its module is on."""
    labels = np.asarray(labels)
    logits = seg_logits(out, labels.shape[-2:] if full_resolution else None)
    if not full_resolution:
        labels = downsample_labels(labels, logits.shape[2:])
    seg = ohem_ce(logits, labels, w.theta_ohem, w.min_kept_fraction, kept=kept)
    terms = DecoupleLossTerms()
    dis = 0.0
    if model.stages and model.ablation.afd_losses:
        for stage, dec in zip(model.stages, out.decoupled):
            a, s, o = stage.losses(dec, labels, tau, kernel)
            terms.align.append(a)
            terms.sem.append(s)
            terms.orth.append(o)
        dis = dis_loss(terms, w)
    kg = kg_sparsity(out.a_delta) if out.a_delta is not None else 0.0
    return total_loss(seg, dis, kg, w, terms.floats())
