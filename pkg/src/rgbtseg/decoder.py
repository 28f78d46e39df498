"""All-MLP decoder: per-stage projection, upsample to stride 4, fuse, classify."""
from __future__ import annotations

from dataclasses import dataclass

from .nn import Conv2d, Module, make_norm, resize_bilinear
from .tensor import ShapeError, Tensor, concat, relu


@dataclass
class DecodedOutput:
    f_fuse: Tensor       # [B, D, H/4, W/4]
    base_logits: Tensor  # [B, K, H/4, W/4]


class Decoder(Module):
    def __init__(self, in_widths, embed_dim: int, num_classes: int, norm="batch", rng=None):
        if len(in_widths) != 4:
            raise ShapeError(f"decoder expects 4 stage widths, got {len(in_widths)}")
        self.embed_dim = embed_dim
        self.proj = [Conv2d(w, embed_dim, 1, rng=rng) for w in in_widths]
        self.fuse = Conv2d(4 * embed_dim, embed_dim, 1, rng=rng)
        self.fuse_norm = make_norm(norm, embed_dim)
        self.classifier = Conv2d(embed_dim, num_classes, 1, rng=rng)

    def forward(self, stages) -> DecodedOutput:
        return decode(self, stages)


def decode(dec: Decoder, stages) -> DecodedOutput:
    if len(stages) != 4:
        raise ShapeError(f"decoder expects 4 stages, got {len(stages)}")
    size = stages[0].shape[2:]
    ups = [resize_bilinear(p(s), size) for p, s in zip(dec.proj, stages)]
    f_fuse = relu(dec.fuse_norm(dec.fuse(concat(ups, axis=1))))
    return DecodedOutput(f_fuse, dec.classifier(f_fuse))
