"""Two-branch convolutional pyramid encoder (RGB and thermal)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ConvNormReLU, Module
from .tensor import ShapeError, Tensor, as_tensor

RGB, THERMAL = "rgb", "thermal"


@dataclass
class FeaturePyramid:
    stages: list[Tensor]

    def __post_init__(self):
        if len(self.stages) != 4:
            raise ShapeError(f"a pyramid has 4 stages, got {len(self.stages)}")

    def shapes(self) -> list[tuple[int, ...]]:
        return [s.shape for s in self.stages]


class _Stage(Module):
    def __init__(self, c_in, c_out, norm, rng, extra_down: bool = False):
        self.pre = ConvNormReLU(c_in, c_out, 3, 2, norm, rng) if extra_down else None
        c = c_out if extra_down else c_in
        self.down = ConvNormReLU(c, c_out, 3, 2, norm, rng)
        self.refine = ConvNormReLU(c_out, c_out, 3, 1, norm, rng)

    def forward(self, x):
        if self.pre is not None:
            x = self.pre(x)
        return self.refine(self.down(x))


class Encoder(Module):
    """Four stages at strides 4, 8, 16, 32 (stage 1 downsamples twice)."""

    def __init__(self, channels=(16, 32, 48, 64), norm="batch", rng=None):
        if any(b <= a for a, b in zip(channels, channels[1:])):
            raise ValueError(f"stage channels must be strictly increasing: {channels}")
        rng = rng or np.random.default_rng(0)
        self.channels = tuple(channels)
        stages, c_prev = [], 3
        for i, c in enumerate(channels):
            stages.append(_Stage(c_prev, c, norm, rng, extra_down=(i == 0)))
            c_prev = c
        self.stages = stages

    def forward(self, image) -> FeaturePyramid:
        x = as_tensor(image)
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"encoder expects [B,3,H,W], got {x.shape}")
        if x.shape[2] % 32 or x.shape[3] % 32:
            raise ShapeError(f"spatial size {x.shape[2:]} must be divisible by 32")
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return FeaturePyramid(feats)


class TwoBranchBackbone(Module):
    """Architecture-identical encoders with independent parameters per modality."""

    def __init__(self, channels=(16, 32, 48, 64), norm="batch", rng=None):
        rng = rng or np.random.default_rng(0)
        self.rgb = Encoder(channels, norm, rng)
        self.thermal = Encoder(channels, norm, rng)

    def encode(self, image, branch: str) -> FeaturePyramid:
        x = as_tensor(image)
        if branch == THERMAL:
            if x.shape[1] == 1:
                x = Tensor(np.repeat(x.data, 3, axis=1), dtype=x.dtype)
            return self.thermal(x)
        if branch == RGB:
            return self.rgb(x)
        raise ValueError(f"unknown modality {branch!r}")
