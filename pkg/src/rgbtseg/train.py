"""Training loop, optimizer, schedule, checkpoints and evaluation."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ust1
from .config import RunConfig, parse_config
from .metrics import MetricsReport, accumulate, alignment_epe, proxy_flow, report
from .nn import resize_bilinear
from .model import SegModel, model_loss, normalize_images
from .sgcm import Taxonomy, build_graph
from .simdata import SegSample, default_taxonomy, generate_split, read_split, sample_seed
from .tensor import NonFiniteError, Tensor, get_default_dtype, no_grad

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "lr", "seg", "dis", "kg", "total", "lambda_mean")
VAL_INDEX_START = 1_000_000       # val scenes use generator indices disjoint from train


class NumericError(RuntimeError):
    pass


class DataMismatchError(ValueError):
    pass


def poly_lr(step: int, base: float, warmup: int, max_steps: int, power: float = 0.9) -> float:
    """Learning rate applied at update ``step`` (1-based)."""
    warm = 1.0 if warmup <= 0 else min(step / warmup, 1.0)
    frac = max(1.0 - step / max_steps, 0.0) if max_steps > 0 else 0.0
    return base * warm * frac ** power


class AdamW:
    """Adaptive moments with decoupled weight decay on matrices and kernels."""

    def __init__(self, named_params, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(named_params)
        self.b1, self.b2 = betas
        self.eps, self.wd = eps, weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for n, p in self.params:
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            m, v = self.m[n], self.v[n]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            upd = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.wd and p.data.ndim >= 2:
                upd = upd + self.wd * p.data
            p.data = (p.data - lr * upd).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        out = {f"adam_m:{n}": a for n, a in self.m.items()}
        out.update({f"adam_v:{n}": a for n, a in self.v.items()})
        return out

    def load(self, state: dict[str, np.ndarray], t: int) -> None:
        for n, _ in self.params:
            self.m[n] = np.array(state[f"adam_m:{n}"], dtype=self.m[n].dtype)
            self.v[n] = np.array(state[f"adam_v:{n}"], dtype=self.v[n].dtype)
        self.t = t


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def train_split(cfg: RunConfig) -> list[SegSample]:
    if cfg.data.dataset_dir:
        samples = read_split(cfg.data.dataset_dir)
    else:
        samples = generate_split(cfg.data.scene(cfg.model.num_classes), cfg.data.train_size)
    _check_k(samples, cfg.model.num_classes)
    return samples


def val_split(cfg: RunConfig) -> list[SegSample]:
    if cfg.data.val_dir:
        samples = read_split(cfg.data.val_dir)
    else:
        samples = generate_split(cfg.data.scene(cfg.model.num_classes), cfg.data.val_size,
                                 start=VAL_INDEX_START)
    _check_k(samples, cfg.model.num_classes)
    return samples


def _check_k(samples, K: int) -> None:
    for s in samples:
        lab = s.labels[s.labels != 65535]
        if lab.size and int(lab.max()) >= K:
            raise DataMismatchError(f"sample {s.index} has class {int(lab.max())} but K={K}")


def pixel_counts(samples, K: int) -> np.ndarray:
    counts = np.zeros(K, dtype=np.int64)
    for s in samples:
        lab = s.labels[s.labels != 65535].astype(np.int64)
        counts += np.bincount(lab, minlength=K)[:K]
    return counts


def batch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng(sample_seed(seed ^ 0x0BA7C4, epoch)).permutation(n)


def batch_indices(seed: int, step: int, n: int, batch_size: int) -> np.ndarray:
    """Sample ids for 0-based ``step``; a pure function of (seed, step) so resuming needs no RNG state."""
    per_epoch = max(n // batch_size, 1)
    epoch, k = divmod(step, per_epoch)
    order = batch_order(seed, epoch, n)
    return order[k * batch_size:(k + 1) * batch_size]


def stack_batch(samples, ids, dtype):
    rgb = np.stack([samples[i].rgb for i in ids])
    thm = np.stack([samples[i].thermal for i in ids])
    lab = np.stack([samples[i].labels for i in ids]).astype(np.int64)
    r, t = normalize_images(rgb, thm, dtype)
    return r, t, lab


def load_taxonomy(cfg: RunConfig) -> Taxonomy:
    if cfg.model.taxonomy:
        return Taxonomy.load(cfg.model.taxonomy)
    return default_taxonomy(cfg.model.num_classes)


def build_model(cfg: RunConfig, samples: list[SegSample] | None) -> SegModel:
    a_p = None
    ab = cfg.ablation
    if ab.sgcm and samples is not None:
        tax = load_taxonomy(cfg) if ab.a_h else None
        graph = build_graph(tax, [s.labels for s in samples], cfg.model.num_classes, ab.a_h, ab.a_c)
        a_p = graph.a_p
    return SegModel(cfg.model, ab, a_p, seed=cfg.run.seed)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path: str | Path, model: SegModel, opt: AdamW | None, step: int,
                    cfg: RunConfig, counts: np.ndarray) -> Path:
    meta = {"step": step, "config": cfg.to_text(), "pixel_counts": [int(c) for c in counts],
            "adam_t": opt.t if opt else 0}
    records = {"meta": ust1.text_to_u8(json.dumps(meta, sort_keys=True))}
    records.update({f"param:{k}" if not k.startswith("buffer:") else k: v
                    for k, v in model.state_dict().items()})
    if opt is not None:
        records.update(opt.state())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ust1.save_named(path, records)
    return path


@dataclass
class Checkpoint:
    model: SegModel
    cfg: RunConfig
    step: int
    pixel_counts: np.ndarray
    records: dict = field(repr=False, default_factory=dict)
    adam_t: int = 0


def load_checkpoint(path: str | Path) -> Checkpoint:
    records = ust1.load_named(path)
    if "meta" not in records:
        raise ust1.FormatError(f"{path}: not a checkpoint (no meta record)")
    meta = json.loads(ust1.u8_to_text(records["meta"]))
    cfg = parse_config(meta["config"])
    model = SegModel(cfg.model, cfg.ablation, None, seed=cfg.run.seed)
    state = {k[len("param:"):] if k.startswith("param:") else k: v for k, v in records.items()
             if k.startswith(("param:", "buffer:"))}
    model.load_state_dict(state)
    return Checkpoint(model, cfg, int(meta["step"]), np.array(meta["pixel_counts"], dtype=np.int64),
                      records, int(meta.get("adam_t", 0)))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: SegModel
    rows: list[dict]
    checkpoint: Path | None
    pixel_counts: np.ndarray
    cfg: RunConfig


def _fmt(v) -> str:
    if isinstance(v, int):
        return str(v)
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def write_log(path: Path, rows, append: bool = False) -> None:
    new = not append or not path.exists()
    with path.open("a" if append else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(LOG_FIELDS)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in LOG_FIELDS])


def read_log(path: str | Path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [{k: (float(v) if v else float("nan")) for k, v in row.items()} for row in csv.DictReader(fh)]


def train(cfg: RunConfig, out_dir: str | Path | None = None, resume: str | Path | None = None,
          samples: list[SegSample] | None = None, write_files: bool = True,
          on_step=None) -> TrainResult:
    """Run ``cfg.optim.max_steps`` updates. ``resume`` continues from a checkpoint of the same config.

    ``on_step(row, model)`` is called after every update (progress, monitoring).
    """
    cfg.validate()
    out = Path(out_dir or cfg.run.out_dir)
    samples = samples if samples is not None else train_split(cfg)
    if not samples:
        raise DataMismatchError("training split is empty")
    counts = pixel_counts(samples, cfg.model.num_classes)
    model = build_model(cfg, samples)
    opt = AdamW(model.named_parameters(), (cfg.optim.beta1, cfg.optim.beta2), cfg.optim.eps,
                cfg.optim.weight_decay)
    start = 0
    if resume is not None:
        ck = load_checkpoint(resume)
        model.load_state_dict({k[len("param:"):] if k.startswith("param:") else k: v
                               for k, v in ck.records.items() if k.startswith(("param:", "buffer:"))})
        opt.load(ck.records, ck.adam_t)
        start = ck.step
    if write_files:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    o, w = cfg.optim, cfg.loss.weights()
    dtype = get_default_dtype()
    rows: list[dict] = []
    model.train()
    for step in range(start, o.max_steps):
        ids = batch_indices(cfg.run.seed, step, len(samples), o.batch_size)
        rgb, thm, lab = stack_batch(samples, ids, dtype)
        lr = poly_lr(step + 1, o.lr, o.warmup_steps, o.max_steps, o.poly_power)
        try:
            res = model(rgb, thm)
            rep = model_loss(model, res, lab, w, cfg.loss.full_resolution,
                             tau=cfg.loss.tau, kernel=cfg.loss.pool_kernel)
        except NonFiniteError as exc:
            raise NumericError(f"step {step + 1}: non-finite value in {exc.op}") from exc
        for term in ("seg", "dis", "kg", "total"):
            if not math.isfinite(getattr(rep, term)):
                raise NumericError(f"step {step + 1}: {term} loss is not finite")
        opt.zero_grad()
        try:
            rep.tensor.backward()
        except NonFiniteError as exc:
            raise NumericError(f"step {step + 1}: non-finite gradient in {exc.op}") from exc
        opt.step(lr)
        lam = float(res.lam.data.mean()) if res.lam is not None else float("nan")
        rows.append({"step": step + 1, "lr": lr, "seg": rep.seg, "dis": rep.dis, "kg": rep.kg,
                     "total": rep.total, "lambda_mean": lam})
        if on_step is not None:
            on_step(rows[-1], model)
        every = cfg.run.checkpoint_every
        if write_files and every and (step + 1) % every == 0 and step + 1 < o.max_steps:
            save_checkpoint(out / f"ckpt_{step + 1:06d}.ust1", model, opt, step + 1, cfg, counts)
    ckpt = None
    if write_files:
        write_log(out / "log.csv", rows, append=resume is not None)
        ckpt = save_checkpoint(out / "checkpoint.ust1", model, opt, max(o.max_steps, start), cfg, counts)
    return TrainResult(model, rows, ckpt, counts, cfg)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def forward_eval(model: SegModel, samples, batch_size: int = 8):
    """Yield (sample, full-res prediction, lambda or None, stage-1 forward offsets or None)."""
    model.eval()
    dtype = get_default_dtype()
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            rgb, thm, _ = stack_batch(chunk, range(len(chunk)), dtype)
            out = model(rgb, thm)
            H, W = chunk[0].labels.shape
            pred = resize_bilinear(out.logits, (H, W)).data.argmax(axis=1)
            offs = out.offsets[0][0].offsets.data if out.offsets and out.offsets[0] else None
            for j, s in enumerate(chunk):
                lam = float(out.lam.data[j]) if out.lam is not None else None
                yield s, pred[j], lam, (offs[j] if offs is not None else None)
    model.train()


def evaluate(model: SegModel, samples, counts=None, head_n: int = 2, tail_n: int = 3,
             batch_size: int = 8) -> MetricsReport:
    if not samples:
        raise DataMismatchError("evaluation split is empty")
    K = model.cfg.num_classes
    _check_k(samples, K)
    conf = np.zeros((K, K), dtype=np.int64)
    lams: dict[str, list[float]] = {}
    epes: dict[str, list[float]] = {}
    for s, pred, lam, offs in forward_eval(model, samples, batch_size):
        accumulate(conf, pred, s.labels)
        if lam is not None:
            lams.setdefault(s.illum_tag, []).append(lam)
        if offs is not None:
            stride = s.labels.shape[0] // offs.shape[-2]
            flow = proxy_flow(offs, stride, s.labels.shape)
            mask = s.rgb_object_mask()
            if mask.any():
                epes.setdefault(s.illum_tag, []).append(alignment_epe(flow, s.gt_flow, mask))
    rep = report(conf, counts, head_n, tail_n)
    for tag, v in sorted(lams.items()):
        rep.extra[f"lambda_mean_{tag}"] = float(np.mean(v))
    if lams:
        rep.extra["lambda_mean"] = float(np.mean([x for v in lams.values() for x in v]))
    for tag, v in sorted(epes.items()):
        rep.extra[f"epe_{tag}"] = float(np.mean(v))
    if epes:
        rep.extra["epe"] = float(np.mean([x for v in epes.values() for x in v]))
    return rep
