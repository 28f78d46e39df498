"""Training objective: OHEM cross-entropy, decoupling aggregate, adjacency sparsity."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .nn import weighted_cross_entropy
from .tensor import Tensor, abs_, as_tensor

IGNORE_INDEX = 65535


@dataclass
class LossWeights:
    lambda_dis: float = 0.1
    lambda_kg: float = 0.01
    lambda_align: float = 0.2
    lambda_sem: float = 0.1
    lambda_orth: float = 0.05
    theta_ohem: float = 0.7
    min_kept_fraction: float = 1.0 / 16

    def __post_init__(self):
        for k, v in vars(self).items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be nonnegative, got {v}")
        if not 0.0 < self.theta_ohem <= 1.0:
            raise ValueError(f"theta_ohem must lie in (0, 1], got {self.theta_ohem}")


@dataclass
class LossReport:
    seg: float
    dis: float
    kg: float
    total: float
    stages: dict[str, list[float]] = field(default_factory=dict)
    tensor: Tensor | None = field(default=None, repr=False)


def true_class_prob(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    s = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=1, keepdims=True)
    return np.take_along_axis(p, labels[:, None], axis=1)[:, 0]


def ohem_select(logits, labels: np.ndarray, theta: float = 0.7, min_kept_fraction: float = 1 / 16,
                min_kept: int | None = None, ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """Boolean mask of kept pixels: true-class probability below ``theta``, topped up
    with the hardest valid pixels when fewer than ``min_kept`` qualify."""
    logits = as_tensor(logits).data
    lab = np.asarray(labels).astype(np.int64)
    valid = lab != ignore_index
    n_valid = int(valid.sum())
    kept = np.zeros(lab.shape, dtype=bool)
    if n_valid == 0:
        return kept
    prob = true_class_prob(logits, np.where(valid, lab, 0))
    kept = valid & (prob < theta)
    if min_kept is None:
        min_kept = math.ceil(min_kept_fraction * n_valid)
    min_kept = min(min_kept, n_valid)
    if kept.sum() < min_kept:
        flat_p = np.where(valid, prob, np.inf).reshape(-1)
        order = np.argsort(flat_p, kind="stable")[:min_kept]
        kept = np.zeros(flat_p.shape, dtype=bool)
        kept[order] = True
        kept = kept.reshape(lab.shape)
    return kept


def ohem_ce(logits, labels: np.ndarray, theta: float = 0.7, min_kept_fraction: float = 1 / 16,
            kept: np.ndarray | None = None, min_kept: int | None = None,
            ignore_index: int = IGNORE_INDEX) -> Tensor:
    """Mean CE over the kept pixels. Passing ``kept`` freezes the selection."""
    logits = as_tensor(logits)
    lab = np.asarray(labels).astype(np.int64)
    if kept is None:
        kept = ohem_select(logits, lab, theta, min_kept_fraction, min_kept, ignore_index)
    n = int(kept.sum())
    if n == 0:
        warnings.warn("ohem_ce: no valid pixels", RuntimeWarning, stacklevel=2)
    w = kept.astype(logits.dtype) / max(n, 1)
    return weighted_cross_entropy(logits, np.where(lab == ignore_index, 0, lab), w)


def dis_loss(terms, w: LossWeights):
    """Mean over the four stages of the weighted align / sem / orth terms."""
    n = len(terms.align)
    if n == 0:
        return 0.0
    total = 0.0
    for i in range(n):
        stage = w.lambda_align * terms.align[i] + w.lambda_orth * terms.orth[i]
        if terms.sem and terms.sem[i] is not None:
            stage = stage + w.lambda_sem * terms.sem[i]
        total = total + stage
    return total * (1.0 / n)


def kg_sparsity(a_delta) -> Tensor:
    return abs_(a_delta).sum()


def _f(v) -> float:
    return float(v.data) if isinstance(v, Tensor) else float(v)


def total_loss(seg, dis, kg, w: LossWeights, stages: dict | None = None) -> LossReport:
    total = seg + w.lambda_dis * dis + w.lambda_kg * kg
    tensor = total if isinstance(total, Tensor) else None
    return LossReport(_f(seg), _f(dis), _f(kg), _f(total), stages or {}, tensor)
