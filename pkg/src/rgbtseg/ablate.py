"""Ablation arms, hyperparameter sweeps and mean/spread result tables."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import plotting
from .config import RunConfig
from .train import build_model, evaluate, train, train_split, val_split

_OFF_ALL = {"fdam": False, "afd_losses": False, "iaa": False, "sgcm": False}


@dataclass
class Arm:
    name: str
    flags: dict = field(default_factory=dict)
    overrides: tuple[str, ...] = ()

    def apply(self, cfg: RunConfig) -> RunConfig:
        out = cfg.copy()
        for k, v in self.flags.items():
            setattr(out.ablation, k, v)
        for item in self.overrides:
            key, _, value = item.partition("=")
            out.set(key, value)
        return out.validate()


def _arm(name, **flags) -> Arm:
    return Arm(name, {**_OFF_ALL, **flags})


PRESETS: dict[str, list[Arm]] = {
    # module level: which of the two modules is switched on
    "modules": [
        _arm("baseline"),
        _arm("+FDAM", fdam=True, afd_losses=True, iaa=True),
        _arm("+SGCM", sgcm=True),
        _arm("+FDAM+SGCM", fdam=True, afd_losses=True, iaa=True, sgcm=True),
    ],
    # inside FDAM, graph calibration off
    "fdam": [
        _arm("baseline"),
        _arm("Asym.", fdam=True),
        _arm("Asym.+L_dis", fdam=True, afd_losses=True),
        _arm("Asym.+L_dis+IAA", fdam=True, afd_losses=True, iaa=True),
    ],
    # knowledge sources inside SGCM, FDAM off
    "sgcm": [
        _arm("baseline"),
        _arm("A_H", sgcm=True, a_h=True, a_c=False, a_delta=False),
        _arm("A_C", sgcm=True, a_h=False, a_c=True, a_delta=False),
        _arm("A_H+A_C", sgcm=True, a_h=True, a_c=True, a_delta=False),
        _arm("A_H+A_C+A_delta", sgcm=True, a_h=True, a_c=True, a_delta=True),
    ],
}

SWEEPS: dict[str, tuple[str, tuple[float, ...]]] = {
    "lambda_dis": ("loss.lambda_dis", (0.0, 0.05, 0.1, 0.5, 1.0)),
    "gamma": ("model.gamma", (0.5, 0.7, 0.85, 0.95, 1.0)),
}


def sweep_arms(name: str) -> list[Arm]:
    key, values = SWEEPS[name]
    return [Arm(f"{name}={v:g}", {}, (f"{key}={v}",)) for v in values]


def resolve_arms(name: str) -> list[Arm]:
    if name in PRESETS:
        return list(PRESETS[name])
    if name in SWEEPS:
        return sweep_arms(name)
    raise KeyError(f"unknown ablation preset {name!r}; choose from {sorted(PRESETS) + sorted(SWEEPS)}")


@dataclass
class RunRecord:
    arm: str
    seed: int
    miou: float
    tail_iou: float
    head_iou: float
    extra: dict = field(default_factory=dict)
    rows: list = field(default_factory=list, repr=False)
    model: object = field(default=None, repr=False)


def run_arm(cfg: RunConfig, arm: Arm, seed: int, data_cache: dict | None = None,
            keep_model: bool = False, diagnostics: bool = True) -> RunRecord:
    c = arm.apply(cfg)
    c.run.seed = seed
    c.data.seed = seed
    key = (seed, c.data.train_size, c.data.val_size, c.data.dataset_dir, c.data.val_dir)
    cache = data_cache if data_cache is not None else {}
    if key not in cache:
        cache[key] = (train_split(c), val_split(c))
    tr, va = cache[key]
    extra = {}
    if diagnostics and c.ablation.fdam:
        untrained = evaluate(build_model(c, tr), va)
        for k in ("epe", "lambda_mean"):
            if k in untrained.extra:
                extra[f"{k}_untrained"] = untrained.extra[k]
    res = train(c, samples=tr, write_files=False)
    rep = evaluate(res.model, va, res.pixel_counts, c.run.head_n, c.run.tail_n)
    extra.update(rep.extra)
    return RunRecord(arm.name, seed, rep.miou, rep.tail_iou, rep.head_iou, extra, res.rows,
                     res.model if keep_model else None)


def _stats(v) -> tuple[float, float]:
    v = np.asarray([x for x in v if x == x], dtype=float)
    if not v.size:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std())


def summarize(records: list[RunRecord], arms: list[Arm]) -> list[dict]:
    table = []
    for arm in arms:
        rs = [r for r in records if r.arm == arm.name]
        row = {"arm": arm.name, "n_seeds": len(rs)}
        for metric in ("miou", "tail_iou", "head_iou"):
            row[f"{metric}_mean"], row[f"{metric}_spread"] = _stats(getattr(r, metric) for r in rs)
        table.append(row)
    return table


def table_csv(table: list[dict]) -> str:
    buf = io.StringIO()
    cols = ["arm", "n_seeds", "miou_mean", "miou_spread", "tail_iou_mean", "tail_iou_spread",
            "head_iou_mean", "head_iou_spread"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in table:
        w.writerow([row[c] if isinstance(row[c], (str, int)) else f"{row[c]:.6f}" for c in cols])
    return buf.getvalue()


def format_table(table: list[dict]) -> str:
    lines = [f"{'arm':<20} {'mIoU':>16} {'Tail':>16}"]
    for r in table:
        lines.append(f"{r['arm']:<20} {100 * r['miou_mean']:7.2f} ± {100 * r['miou_spread']:5.2f}  "
                     f"{100 * r['tail_iou_mean']:7.2f} ± {100 * r['tail_iou_spread']:5.2f}")
    return "\n".join(lines)


def ablate(cfg: RunConfig, arms: list[Arm], seeds=(0, 1, 2), out_dir: str | Path | None = None,
           keep_models: bool = False, figures: bool = True, progress=None):
    """Train every arm on every seed; same seeds => same data and initial weights per arm."""
    cache: dict = {}
    records = []
    for arm in arms:
        for seed in seeds:
            rec = run_arm(cfg, arm, seed, cache, keep_models)
            records.append(rec)
            if progress:
                progress(rec)
    table = summarize(records, arms)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.csv").write_text(table_csv(table), encoding="utf-8")
        with (out / "runs.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            keys = sorted({k for r in records for k in r.extra})
            w.writerow(["arm", "seed", "miou", "tail_iou", "head_iou", *keys])
            for r in records:
                w.writerow([r.arm, r.seed, f"{r.miou:.6f}", f"{r.tail_iou:.6f}", f"{r.head_iou:.6f}",
                            *(f"{r.extra[k]:.6f}" if k in r.extra else "" for k in keys)])
        if figures:
            plotting.ablation_bars(table, out / "ablation_miou.png", "miou")
            plotting.ablation_bars(table, out / "ablation_tail.png", "tail_iou")
    return table, records
