"""Category-graph calibration of segmentation logits.

Static priors (taxonomy distance and image-level co-occurrence) are fused
into a symmetric normalised adjacency; a learnable residual adapts it.
Per-image class nodes are pooled from the fused features with the base
logits as soft assignments, refined by a prior-biased two-layer GAT, and
scored back against every pixel to produce graph logits.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .nn import Module, Parameter, kaiming_uniform
from .tensor import (
    DomainError, ShapeError, Tensor, as_tensor, get_default_dtype, leaky_relu, log, masked_softmax,
    power, relu, softmax, transpose,
)

PRIOR_WEIGHTS = (0.6, 0.4)
MASK_THRESHOLD = 1e-5
LOG_EPS = 1e-6
POOL_EPS = 1e-6
DEGREE_EPS = 1e-8


class TaxonomyError(ValueError):
    pass


class DegenerateGraphError(RuntimeError):
    pass


@dataclass
class Taxonomy:
    """Leaves in class-id order; each leaf is its root-to-leaf component path."""

    leaves: list[tuple[str, ...]]

    def __post_init__(self):
        if not self.leaves:
            raise TaxonomyError("taxonomy has no leaves")
        seen = set()
        for i, path in enumerate(self.leaves):
            if not path or any(not p for p in path):
                raise TaxonomyError(f"leaf {i} has an empty path component: {path!r}")
            if path in seen:
                raise TaxonomyError(f"duplicate leaf {'/'.join(path)}")
            seen.add(path)
        inner = {p[:k] for p in self.leaves for k in range(1, len(p))}
        clash = [p for p in self.leaves if p in inner]
        if clash:
            raise TaxonomyError(f"leaf {'/'.join(clash[0])} is also an inner node")

    @property
    def num_classes(self) -> int:
        return len(self.leaves)

    def depth(self, i: int) -> int:
        return len(self.leaves[i])

    def parent(self, i: int) -> tuple[str, ...]:
        return self.leaves[i][:-1]

    def distance(self, i: int, j: int) -> int:
        """Number of edges on the tree path between leaves i and j (implicit common root)."""
        a, b = self.leaves[i], self.leaves[j]
        common = 0
        for x, y in zip(a, b):
            if x != y:
                break
            common += 1
        return len(a) + len(b) - 2 * common

    def digest(self) -> str:
        text = "\n".join("/".join(p) for p in self.leaves)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def to_text(self) -> str:
        return "".join("/".join(p) + "\n" for p in self.leaves)

    @classmethod
    def from_paths(cls, paths: Iterable[str]) -> "Taxonomy":
        return cls([tuple(p.strip().split("/")) for p in paths])

    @classmethod
    def parse(cls, text: str, source: str = "<taxonomy>") -> "Taxonomy":
        leaves = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = tuple(line.split("/"))
            if any(not p.strip() or p != p.strip() for p in parts):
                raise TaxonomyError(f"{source}:{lineno}: malformed leaf path {raw!r}")
            leaves.append(parts)
        try:
            return cls(leaves)
        except TaxonomyError as exc:
            raise TaxonomyError(f"{source}: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "Taxonomy":
        return cls.parse(Path(path).read_text(encoding="utf-8"), str(path))


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------


def build_hierarchy_prior(tax: Taxonomy, s: float = 2.0) -> np.ndarray:
    K = tax.num_classes
    d = np.array([[tax.distance(i, j) for j in range(K)] for i in range(K)], dtype=np.float64)
    return np.exp(-d / s)


def build_cooccurrence_prior(train_labels: Iterable[np.ndarray], num_classes: int,
                             ignore_index: int = 65535) -> np.ndarray:
    """N(i and j) / max(N(i), N(j)) over image-level presence; diagonal fixed at 1."""
    K = num_classes
    both = np.zeros((K, K), dtype=np.int64)
    n_images = 0
    for lab in train_labels:
        lab = np.asarray(lab)
        vals = np.unique(lab[lab != ignore_index])
        if vals.size and (vals.max() >= K or vals.min() < 0):
            raise ValueError(f"label {int(vals.max())} outside [0, {K})")
        present = np.zeros(K, dtype=np.int64)
        present[vals.astype(np.int64)] = 1
        both += np.outer(present, present)
        n_images += 1
    if n_images == 0:
        raise ValueError("co-occurrence prior needs at least one training image")
    counts = np.diag(both)
    denom = np.maximum(counts[:, None], counts[None, :])
    a_c = np.divide(both, denom, out=np.zeros((K, K)), where=denom > 0)
    np.fill_diagonal(a_c, 1.0)
    return a_c


def sym_norm(a: np.ndarray) -> np.ndarray:
    deg = a.sum(axis=1)
    deg = np.where(deg > 0, deg, DEGREE_EPS)
    dinv = 1.0 / np.sqrt(deg)
    return a * np.outer(dinv, dinv)


def combine_priors(a_h: np.ndarray | None, a_c: np.ndarray | None,
                   weights: tuple[float, float] = PRIOR_WEIGHTS) -> np.ndarray:
    """A_p = SymNorm(sym(w_h A_H + w_c A_C)). A missing prior drops its term;
    with neither, the graph keeps only self-loops."""
    mats = [m for m in (a_h, a_c) if m is not None]
    for m in mats:
        if np.any(m < 0):
            raise DomainError("priors must be nonnegative")
    if not mats:
        raise ValueError("combine_priors needs at least one prior (use identity_prior)")
    raw = np.zeros_like(mats[0], dtype=np.float64)
    if a_h is not None:
        raw = raw + weights[0] * a_h
    if a_c is not None:
        raw = raw + weights[1] * a_c
    return sym_norm(0.5 * (raw + raw.T))


def identity_prior(k: int) -> np.ndarray:
    return np.eye(k)


def effective_adjacency(a_p, a_delta=None) -> Tensor:
    """SymNorm(sym(ReLU(A_p + A_delta))), exactly symmetric by construction."""
    a_p = as_tensor(a_p)
    upd = relu(a_p + a_delta) if a_delta is not None else relu(a_p)
    s = (upd + transpose(upd, (1, 0))) * 0.5
    deg = s.sum(axis=1)
    guard = Tensor(np.where(deg.data > 0, 0.0, DEGREE_EPS), dtype=deg.dtype)
    dinv = power(deg + guard, -0.5)
    outer = dinv.reshape(-1, 1) * dinv.reshape(1, -1)
    return s * outer


# ---------------------------------------------------------------------------
# node aggregation, graph attention, read-out
# ---------------------------------------------------------------------------


def aggregate_nodes(f_fuse, l0) -> Tensor:
    """Soft attention pooling: class softmax per pixel, spatially renormalised per class."""
    f_fuse, l0 = as_tensor(f_fuse), as_tensor(l0)
    B, D, H, W = f_fuse.shape
    if l0.shape[0] != B or l0.shape[2:] != (H, W):
        raise ShapeError(f"aggregate_nodes: logits {l0.shape} vs features {f_fuse.shape}")
    K = l0.shape[1]
    w = softmax(l0, axis=1).reshape(B, K, H * W)
    num = w @ f_fuse.reshape(B, D, H * W).transpose(0, 2, 1)       # [B, K, D]
    den = w.sum(axis=2, keepdims=True) + POOL_EPS
    return num / den


class GATLayer(Module):
    """Multi-head attention over the K class nodes with a log-prior bias."""

    def __init__(self, d_in: int, d_out: int, heads: int = 4, merge: str = "concat", rng=None):
        if merge not in ("concat", "average"):
            raise ValueError(f"merge must be 'concat' or 'average', got {merge!r}")
        rng = rng or np.random.default_rng(0)
        self.heads, self.merge = heads, merge
        self.weight = Parameter(kaiming_uniform(rng, (heads, d_in, d_out), d_in) / np.sqrt(2.0))
        bound = np.sqrt(6.0 / (2 * d_out + 1))
        self.att_src = Parameter(rng.uniform(-bound, bound, (heads, d_out, 1)))
        self.att_dst = Parameter(rng.uniform(-bound, bound, (heads, d_out, 1)))

    def forward(self, h, adj):
        return gat_layer(self, h, adj)

    def attention(self, h, adj) -> Tensor:
        return _gat(self, h, adj)[1]


def edge_mask(adj: np.ndarray) -> np.ndarray:
    mask = np.asarray(adj) >= MASK_THRESHOLD
    if not mask.any(axis=1).all():
        bad = int(np.flatnonzero(~mask.any(axis=1))[0])
        raise DegenerateGraphError(f"node {bad} has no unmasked edge, not even a self-loop")
    return mask


def _gat(layer: GATLayer, h, adj):
    h, adj = as_tensor(h), as_tensor(adj)
    B, K, _ = h.shape
    mask = edge_mask(adj.data)
    wh = h.reshape(B, 1, K, h.shape[2]) @ layer.weight            # [B, H, K, d]
    src = wh @ layer.att_src                                       # [B, H, K, 1]
    dst = wh @ layer.att_dst
    e = leaky_relu(src + transpose(dst, (0, 1, 3, 2)), 0.2)        # [B, H, K, K]
    alpha = masked_softmax(e + log(adj + LOG_EPS), mask, axis=-1)
    return wh, alpha


def gat_layer(layer: GATLayer, h, adj) -> Tensor:
    wh, alpha = _gat(layer, h, adj)
    out = alpha @ wh                                               # [B, H, K, d]
    B, Hh, K, d = out.shape
    if layer.merge == "concat":
        return out.transpose(0, 2, 1, 3).reshape(B, K, Hh * d)
    return out.mean(axis=1)


def graph_logits(h_ref, f_fuse) -> Tensor:
    h_ref, f_fuse = as_tensor(h_ref), as_tensor(f_fuse)
    B, D, H, W = f_fuse.shape
    if h_ref.shape[0] != B or h_ref.shape[2] != D:
        raise ShapeError(f"graph_logits: node width {h_ref.shape} vs features {f_fuse.shape}")
    return (h_ref @ f_fuse.reshape(B, D, H * W)).reshape(B, h_ref.shape[1], H, W)


def calibrate(l0, lg, gamma: float = 0.85) -> Tensor:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    l0, lg = as_tensor(l0), as_tensor(lg)
    if l0.shape != lg.shape:
        raise ShapeError(f"calibrate: {l0.shape} vs {lg.shape}")
    return l0 * gamma + lg * (1.0 - gamma)


@dataclass
class CategoryGraph:
    a_h: np.ndarray | None
    a_c: np.ndarray | None
    a_p: np.ndarray

    def manifest(self, tax: Taxonomy | None = None) -> str:
        lines = [f"K={self.a_p.shape[0]}"]
        if tax is not None:
            lines.append(f"taxonomy_hash={tax.digest()}")
        lines.append(f"has_a_h={int(self.a_h is not None)}")
        lines.append(f"has_a_c={int(self.a_c is not None)}")
        return "\n".join(lines) + "\n"


def build_graph(tax: Taxonomy | None, train_labels: Sequence[np.ndarray] | None, num_classes: int,
                use_h: bool = True, use_c: bool = True, s: float = 2.0) -> CategoryGraph:
    a_h = build_hierarchy_prior(tax, s) if use_h else None
    if a_h is not None and a_h.shape[0] != num_classes:
        raise ValueError(f"taxonomy has {a_h.shape[0]} leaves but the model has {num_classes} classes")
    a_c = build_cooccurrence_prior(train_labels, num_classes) if use_c else None
    a_p = combine_priors(a_h, a_c) if (use_h or use_c) else identity_prior(num_classes)
    return CategoryGraph(a_h, a_c, a_p)


@dataclass
class SGCMOutput:
    logits: Tensor
    graph_logits: Tensor
    adjacency: Tensor
    h0: Tensor
    h_ref: Tensor


class SGCM(Module):
    _buffer_names = ("a_p",)

    def __init__(self, num_classes: int, embed_dim: int, a_p: np.ndarray, heads: int = 4,
                 gamma: float = 0.85, learn_residual: bool = True, rng=None):
        if embed_dim % heads:
            raise ValueError(f"embedding width {embed_dim} not divisible by {heads} heads")
        if not 0.0 <= gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
        rng = rng or np.random.default_rng(0)
        self.gamma = gamma
        self.a_p = np.asarray(a_p, dtype=get_default_dtype())
        self.a_delta = Parameter(np.zeros((num_classes, num_classes))) if learn_residual else None
        self.gat1 = GATLayer(embed_dim, embed_dim // heads, heads, "concat", rng)
        self.gat2 = GATLayer(embed_dim, embed_dim, heads, "average", rng)

    def adjacency(self) -> Tensor:
        return effective_adjacency(self.a_p, self.a_delta)

    def forward(self, f_fuse, l0) -> SGCMOutput:
        adj = self.adjacency()
        h0 = aggregate_nodes(f_fuse, l0)
        h_ref = gat_layer(self.gat2, relu(gat_layer(self.gat1, h0, adj)), adj)
        lg = graph_logits(h_ref, f_fuse)
        return SGCMOutput(calibrate(l0, lg, self.gamma), lg, adj, h0, h_ref)
