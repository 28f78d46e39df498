"""Confusion-matrix segmentation metrics and the alignment endpoint error."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .nn import _resize_matrix

IGNORE_INDEX = 65535


class MetricsError(ValueError):
    pass


def accumulate(confusion: np.ndarray, pred: np.ndarray, truth: np.ndarray,
               ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """Add the (truth, pred) pair counts of one label map to ``confusion`` in place."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise MetricsError(f"prediction {pred.shape} and truth {truth.shape} differ in shape")
    K = confusion.shape[0]
    keep = truth != ignore_index
    t = truth[keep].astype(np.int64)
    p = pred[keep].astype(np.int64)
    if t.size and (t.max() >= K or p.max() >= K or t.min() < 0 or p.min() < 0):
        raise MetricsError(f"class id outside [0, {K})")
    confusion += np.bincount(t * K + p, minlength=K * K).reshape(K, K)
    return confusion


def head_tail_partition(pixel_counts, head_n: int, tail_n: int) -> tuple[list[int], list[int]]:
    counts = np.asarray(pixel_counts)
    K = counts.shape[0]
    if head_n + tail_n > K:
        raise MetricsError(f"head_n + tail_n = {head_n + tail_n} exceeds K = {K}")
    order = sorted(range(K), key=lambda k: (-counts[k], k))
    return order[:head_n], order[K - tail_n:] if tail_n else []


@dataclass
class MetricsReport:
    confusion: np.ndarray
    per_class_iou: np.ndarray          # NaN where undefined
    miou: float
    macc: float
    aacc: float
    head_iou: float
    tail_iou: float
    head_n: int
    tail_n: int
    skipped: int = 0
    head_ids: list[int] = field(default_factory=list)
    tail_ids: list[int] = field(default_factory=list)
    extra: dict[str, float] = field(default_factory=dict)

    def to_kv(self) -> str:
        rows = [
            ("miou", self.miou), ("macc", self.macc), ("aacc", self.aacc),
            ("head_iou", self.head_iou), ("tail_iou", self.tail_iou),
            ("head_n", self.head_n), ("tail_n", self.tail_n),
            ("head_ids", ",".join(map(str, self.head_ids))),
            ("tail_ids", ",".join(map(str, self.tail_ids))),
            ("skipped_classes", self.skipped),
        ]
        rows += sorted(self.extra.items())
        return "".join(f"{k}={_fmt(v)}\n" for k, v in rows)

    def per_class_csv(self, names=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "name", "iou", "gt_pixels", "pred_pixels"])
        gt, pr = self.confusion.sum(axis=1), self.confusion.sum(axis=0)
        for k, iou in enumerate(self.per_class_iou):
            name = names[k] if names is not None else str(k)
            w.writerow([k, name, "" if np.isnan(iou) else f"{iou:.6f}", int(gt[k]), int(pr[k])])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if np.isnan(v) else f"{v:.6f}"
    return str(v)


def _nanmean(v: np.ndarray) -> float:
    v = v[~np.isnan(v)]
    return float(v.mean()) if v.size else float("nan")


def report(confusion: np.ndarray, pixel_counts=None, head_n: int = 2, tail_n: int = 3) -> MetricsReport:
    """Scores from a confusion matrix (rows = truth). Undefined classes are skipped, not zeroed.

    ``pixel_counts`` (training-split class histogram) decides the head/tail partition;
    by default the evaluation ground-truth counts are used.
    """
    conf = np.asarray(confusion, dtype=np.int64)
    tp = np.diag(conf).astype(np.float64)
    gt, pr = conf.sum(axis=1), conf.sum(axis=0)
    union = gt + pr - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
        recall = np.where(gt > 0, tp / gt, np.nan)
    total = conf.sum()
    aacc = float(tp.sum() / total) if total else float("nan")
    counts = gt if pixel_counts is None else np.asarray(pixel_counts)
    head, tail = head_tail_partition(counts, head_n, tail_n)
    return MetricsReport(
        confusion=conf, per_class_iou=iou, miou=_nanmean(iou), macc=_nanmean(recall), aacc=aacc,
        head_iou=_nanmean(iou[head]) if head else float("nan"),
        tail_iou=_nanmean(iou[tail]) if tail else float("nan"),
        head_n=head_n, tail_n=tail_n, skipped=int(np.isnan(iou).sum()),
        head_ids=list(head), tail_ids=list(tail),
    )


def alignment_epe(pred_flow: np.ndarray, gt_flow: np.ndarray, object_mask: np.ndarray) -> float:
    """Mean Euclidean endpoint error over ``object_mask`` pixels."""
    pred_flow, gt_flow = np.asarray(pred_flow, np.float64), np.asarray(gt_flow, np.float64)
    if pred_flow.shape != gt_flow.shape:
        raise MetricsError(f"flow shapes differ: {pred_flow.shape} vs {gt_flow.shape}")
    mask = np.asarray(object_mask, dtype=bool)
    if not mask.any():
        raise MetricsError("alignment_epe: empty object mask")
    err = np.sqrt(((pred_flow - gt_flow) ** 2).sum(axis=0))
    return float(err[mask].mean())


def proxy_flow(offsets: np.ndarray, stride: int, size: tuple[int, int]) -> np.ndarray:
    """Mean tap displacement of an [18, h, w] offset field, in image pixels at ``size``."""
    off = np.asarray(offsets, np.float64).reshape(9, 2, *offsets.shape[-2:]).mean(axis=0) * stride
    ry = _resize_matrix(off.shape[1], size[0], np.float64)
    rx = _resize_matrix(off.shape[2], size[1], np.float64)
    return np.einsum("yh,chw,xw->cyx", ry, off, rx)
