"""Feature decoupling and alignment.

Per stage: a weight-shared two-block encoder and two single-block
modality-private encoders split each modality into shared and private
parts; two offset predictors estimate deformable warps in the shared
subspace (thermal towards RGB and RGB towards thermal); a global
illumination weight picks the anchor frame by blending warped and
original features; the private parts reuse the same offsets with their
own deformable weights.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import Conv2d, ConvNormReLU, DeformConv2d, Module
from .tensor import (
    ShapeError, Tensor, as_tensor, concat, cosine_similarity, l2_normalize, log_softmax, sigmoid,
)

FORWARD, BACKWARD = "forward", "backward"
MASK_BIAS_INIT = 5.0


@dataclass
class DecoupledStage:
    shared_r: Tensor
    shared_t: Tensor
    private_r: Tensor
    private_t: Tensor


@dataclass
class OffsetField:
    offsets: Tensor       # [B, 18, H, W], (dy, dx) per tap
    mask_logits: Tensor   # [B, 9, H, W]
    direction: str

    @property
    def mask(self) -> Tensor:
        return sigmoid(self.mask_logits)


@dataclass
class AlignedStage:
    shared_r_hat: Tensor
    shared_t_hat: Tensor
    private_r_hat: Tensor
    private_t_hat: Tensor
    lam: Tensor
    fields: tuple[OffsetField, ...] = ()


@dataclass
class DecoupleLossTerms:
    align: list = field(default_factory=list)
    sem: list = field(default_factory=list)
    orth: list = field(default_factory=list)

    def floats(self) -> dict[str, list[float]]:
        f = lambda v: float(v.data) if isinstance(v, Tensor) else float(v)
        return {"align": [f(v) for v in self.align], "sem": [f(v) for v in self.sem],
                "orth": [f(v) for v in self.orth]}


# ---------------------------------------------------------------------------
# decoupling
# ---------------------------------------------------------------------------


class SharedEncoder(Module):
    def __init__(self, c, norm="batch", rng=None):
        self.block1 = ConvNormReLU(c, c, 3, 1, norm, rng)
        self.block2 = ConvNormReLU(c, c, 3, 1, norm, rng)

    def forward(self, x):
        return self.block2(self.block1(x))


class AFD(Module):
    def __init__(self, c, norm="batch", rng=None):
        self.shared = SharedEncoder(c, norm, rng)
        self.private_r = ConvNormReLU(c, c, 3, 1, norm, rng)
        self.private_t = ConvNormReLU(c, c, 3, 1, norm, rng)

    def forward(self, f_r, f_t) -> DecoupledStage:
        return afd_decouple(self, f_r, f_t)


def afd_decouple(afd: AFD, f_r, f_t) -> DecoupledStage:
    f_r, f_t = as_tensor(f_r), as_tensor(f_t)
    if f_r.shape != f_t.shape:
        raise ShapeError(f"modalities disagree in shape: {f_r.shape} vs {f_t.shape}")
    return DecoupledStage(afd.shared(f_r), afd.shared(f_t), afd.private_r(f_r), afd.private_t(f_t))


def loss_align(shared_r, shared_t, tau: float = 0.07, kernel: int = 8) -> Tensor:
    """Patch contrastive loss: thermal patch j is the positive for RGB patch j.

    Negatives are the other thermal patches of the same image.
    """
    shared_r, shared_t = as_tensor(shared_r), as_tensor(shared_t)
    B, C, H, W = shared_r.shape
    k = min(kernel, H, W)
    pr = l2_normalize(nn.avg_pool2d(shared_r, k), axis=1)
    pt = l2_normalize(nn.avg_pool2d(shared_t, k), axis=1)
    n = pr.shape[2] * pr.shape[3]
    if n < 1:
        raise ShapeError("loss_align needs at least one patch")
    pr = pr.reshape(B, C, n).transpose(0, 2, 1)
    pt = pt.reshape(B, C, n)
    logp = log_softmax((pr @ pt) * (1.0 / tau), axis=-1)
    eye = Tensor(np.eye(n), dtype=logp.dtype)
    return -(logp * eye).sum() * (1.0 / (B * n))


def loss_orth(shared, private, eps: float = 1e-8) -> Tensor:
    """Squared mean per-pixel cosine similarity over the channel axis."""
    c = cosine_similarity(shared, private, axis=1, eps=eps).mean()
    return c * c


def downsample_labels(labels: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour downsample: each output pixel takes the top-left of its block."""
    lab = np.asarray(labels)
    H, W = lab.shape[-2:]
    h, w = size
    if (H, W) == (h, w):
        return lab
    rows = (np.arange(h) * H) // h
    cols = (np.arange(w) * W) // w
    return lab[..., rows[:, None], cols[None, :]]


def loss_sem(logits, labels: np.ndarray, ignore_index: int = 65535) -> Tensor:
    """Mean CE of a stage head against labels brought to the head's resolution."""
    logits = as_tensor(logits)
    lab = downsample_labels(labels, logits.shape[2:])
    loss, n = nn.mean_cross_entropy(logits, lab, ignore_index)
    if n == 0:
        warnings.warn("loss_sem: every pixel is ignored", RuntimeWarning, stacklevel=2)
    return loss


# ---------------------------------------------------------------------------
# alignment
# ---------------------------------------------------------------------------


class OffsetPredictor(Module):
    """3x3 conv on (fixed || moving): 18 offset channels then 9 mask logits."""

    def __init__(self, c, direction: str, rng=None):
        self.direction = direction
        self.conv = Conv2d(2 * c, 27, 3, rng=rng)
        self.conv.weight.data[:] = 0.0
        bias = np.zeros(27)
        bias[18:] = MASK_BIAS_INIT
        self.conv.bias.data[:] = bias

    def forward(self, fixed, moving) -> OffsetField:
        return predict_offsets(self, fixed, moving)


def predict_offsets(pred: OffsetPredictor, fixed, moving) -> OffsetField:
    fixed, moving = as_tensor(fixed), as_tensor(moving)
    if fixed.shape != moving.shape:
        raise ShapeError(f"offset predictor inputs differ: {fixed.shape} vs {moving.shape}")
    out = pred.conv(concat([fixed, moving], axis=1))
    return OffsetField(out[:, :18], out[:, 18:], pred.direction)


class IlluminationRouter(Module):
    """lambda = sigmoid(MLP(GAP(rgb))), one scalar per image."""

    def __init__(self, hidden: int = 16, rng=None):
        self.mlp = nn.MLP(3, hidden, 1, rng, zero_last=True)

    def forward(self, rgb) -> Tensor:
        return illumination_weight(self, rgb)


def illumination_weight(router: IlluminationRouter, rgb_image) -> Tensor:
    x = as_tensor(rgb_image)
    pooled = nn.gap(x).reshape(x.shape[0], x.shape[1])
    return sigmoid(router.mlp(pooled)).reshape(x.shape[0])


def blend(warped, original, weight) -> Tensor:
    """weight * warped + (1 - weight) * original, weight broadcast per image."""
    w = as_tensor(weight).reshape(-1, 1, 1, 1)
    return warped * w + original * (1.0 - w)


class IAA(Module):
    def __init__(self, c, rng=None):
        self.pred_f = OffsetPredictor(c, FORWARD, rng)
        self.pred_b = OffsetPredictor(c, BACKWARD, rng)
        self.dcn_shared_f = DeformConv2d(c)
        self.dcn_shared_b = DeformConv2d(c)
        self.dcn_private_f = DeformConv2d(c)
        self.dcn_private_b = DeformConv2d(c)

    def forward(self, dec: DecoupledStage, lam) -> AlignedStage:
        return iaa_align(self, dec, lam)


def iaa_align(iaa: IAA, dec: DecoupledStage, lam) -> AlignedStage:
    lam = as_tensor(lam)
    fwd = iaa.pred_f(dec.shared_r, dec.shared_t)   # RGB fixed, thermal moves
    bwd = iaa.pred_b(dec.shared_t, dec.shared_r)   # thermal fixed, RGB moves
    m_f, m_b = fwd.mask, bwd.mask
    st_w = iaa.dcn_shared_f(dec.shared_t, fwd.offsets, m_f)
    sr_w = iaa.dcn_shared_b(dec.shared_r, bwd.offsets, m_b)
    pt_w = iaa.dcn_private_f(dec.private_t, fwd.offsets, m_f)
    pr_w = iaa.dcn_private_b(dec.private_r, bwd.offsets, m_b)
    inv = 1.0 - lam
    return AlignedStage(
        shared_r_hat=blend(sr_w, dec.shared_r, inv),
        shared_t_hat=blend(st_w, dec.shared_t, lam),
        private_r_hat=blend(pr_w, dec.private_r, inv),
        private_t_hat=blend(pt_w, dec.private_t, lam),
        lam=lam,
        fields=(fwd, bwd),
    )


def identity_alignment(dec: DecoupledStage, lam) -> AlignedStage:
    return AlignedStage(dec.shared_r, dec.shared_t, dec.private_r, dec.private_t, as_tensor(lam))


class StageFusion(Module):
    def __init__(self, c, rng=None):
        self.compress = Conv2d(2 * c, c, 1, rng=rng)

    def forward(self, al: AlignedStage) -> Tensor:
        return fuse_stage(self, al)


def fuse_stage(fusion: StageFusion, al: AlignedStage) -> Tensor:
    shared = fusion.compress(concat([al.shared_r_hat, al.shared_t_hat], axis=1))
    return concat([shared, al.private_r_hat, al.private_t_hat], axis=1)


class FDAMStage(Module):
    """Decouple, (optionally) align, fuse. Output width is 3 * C."""

    def __init__(self, c, num_classes, norm="batch", use_iaa=True, rng=None):
        self.c = c
        self.afd = AFD(c, norm, rng)
        self.iaa = IAA(c, rng) if use_iaa else None
        self.fusion = StageFusion(c, rng)
        self.sem_head = Conv2d(c, num_classes, 1, rng=rng)

    def forward(self, f_r, f_t, lam):
        dec = self.afd(f_r, f_t)
        al = self.iaa(dec, lam) if self.iaa is not None else identity_alignment(dec, lam)
        return self.fusion(al), dec, al

    def losses(self, dec: DecoupledStage, labels: np.ndarray | None, tau=0.07, kernel=8):
        """(align, sem, orth) for this stage; sem averages both modalities' shared maps."""
        align = loss_align(dec.shared_r, dec.shared_t, tau, kernel)
        orth = (loss_orth(dec.shared_r, dec.private_r) + loss_orth(dec.shared_t, dec.private_t)) * 0.5
        sem = None
        if labels is not None:
            sem = (loss_sem(self.sem_head(dec.shared_r), labels)
                   + loss_sem(self.sem_head(dec.shared_t), labels)) * 0.5
        return align, sem, orth
