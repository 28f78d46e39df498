"""Command-line driver: gen-data, build-priors, train, eval, ablate, grad-check.

Exit codes: 0 success, 1 config error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import ablate as ablate_mod
from . import plotting, ust1
from .config import ConfigError, load_config
from .gradsuite import grad_check_all
from .metrics import MetricsError
from .priors import PriorError, build_priors_from_dirs
from .sgcm import TaxonomyError
from .simdata import DataError, default_taxonomy, generate_split, read_split, write_split
from .train import (
    DataMismatchError, NumericError, evaluate, load_checkpoint, read_log, train, val_split,
)

log = logging.getLogger("rgbtseg")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
_DATA_ERRORS = (DataError, DataMismatchError, ust1.FormatError, FileNotFoundError, PriorError,
                TaxonomyError, MetricsError)


def _config(args):
    return load_config(args.config, args.set or [])


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    scene = cfg.data.scene(cfg.model.num_classes)
    samples = generate_split(scene, args.count, args.start)
    tax = default_taxonomy(cfg.model.num_classes)
    out = write_split(args.out, samples, scene, tax)
    (out / "taxonomy.txt").write_text(tax.to_text(), encoding="utf-8")
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def cmd_build_priors(args) -> int:
    graph = build_priors_from_dirs(args.taxonomy, args.split, args.out)
    if not args.no_figures:
        mats = {"A_H": graph.a_h, "A_C": graph.a_c, "A_p": graph.a_p}
        plotting.prior_heatmaps(mats, Path(args.out) / "priors.png")
    print(f"wrote priors for K={graph.a_p.shape[0]} to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out or cfg.run.out_dir)
    res = train(cfg, out, resume=args.resume)
    if cfg.run.figures and (out / "log.csv").exists():
        rows = read_log(out / "log.csv")
        if rows:
            plotting.loss_curves(rows, out / "loss_curves.png")
    last = res.rows[-1] if res.rows else None
    print(f"checkpoint={res.checkpoint}")
    if last:
        print(f"final_step={last['step']} total={last['total']:.6f} seg={last['seg']:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    cfg = ck.cfg
    if args.split:
        samples = read_split(args.split)
    else:
        samples = val_split(cfg)
    rep = evaluate(ck.model, samples, ck.pixel_counts, cfg.run.head_n, cfg.run.tail_n)
    out = Path(args.out or Path(args.checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    names = ["/".join(p) for p in default_taxonomy(cfg.model.num_classes).leaves]
    (out / "metrics.txt").write_text(rep.to_kv(), encoding="utf-8")
    (out / "per_class_iou.csv").write_text(rep.per_class_csv(names), encoding="utf-8")
    if cfg.run.figures:
        plotting.per_class_iou(rep.per_class_iou, names, out / "per_class_iou.png")
    sys.stdout.write(rep.to_kv())
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    arms = ablate_mod.resolve_arms(args.preset)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    out = Path(args.out or Path(cfg.run.out_dir) / f"ablate_{args.preset}")

    def progress(rec):
        print(f"arm={rec.arm} seed={rec.seed} miou={rec.miou:.4f} tail={rec.tail_iou:.4f}", flush=True)

    table, _ = ablate_mod.ablate(cfg, arms, seeds, out, figures=cfg.run.figures, progress=progress)
    print(ablate_mod.format_table(table))
    return EXIT_OK


def cmd_grad_check(args) -> int:
    names = args.only.split(",") if args.only else None
    reports = grad_check_all(args.seed, names, args.repeats)
    for r in reports:
        print(r.line(), flush=True)
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rgbtseg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="section.key=value config file")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config key")
        return sp

    g = with_config(sub.add_parser("gen-data", help="write a synthetic split to disk"))
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=256)
    g.add_argument("--start", type=int, default=0, help="first generator index")
    g.set_defaults(func=cmd_gen_data)

    b = sub.add_parser("build-priors", help="build A_H, A_C, A_p from a taxonomy and a train split")
    b.add_argument("--taxonomy", required=True)
    b.add_argument("--split", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--no-figures", action="store_true")
    b.set_defaults(func=cmd_build_priors)

    t = with_config(sub.add_parser("train", help="train one run"))
    t.add_argument("--out")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", help="split directory (default: regenerate the run's val split)")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = with_config(sub.add_parser("ablate", help="train and compare ablation arms over seeds"))
    a.add_argument("--preset", default="modules",
                   help="modules | fdam | sgcm | lambda_dis | gamma")
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("grad-check", help="finite-difference check of every differentiable op")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--repeats", type=int, default=1)
    c.add_argument("--only", help="comma-separated check names")
    c.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyError as exc:
        if args.command == "ablate":
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        raise
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
