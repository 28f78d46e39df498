"""Persisted category-graph priors (A_H, A_C, A_p) built from a taxonomy file and a train split."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import ust1
from .sgcm import CategoryGraph, Taxonomy, build_graph
from .simdata import read_manifest, read_split

FILES = {"a_h": "A_H.ust1", "a_c": "A_C.ust1", "a_p": "A_p.ust1"}


class PriorError(ValueError):
    pass


def build_priors(taxonomy: Taxonomy, train_labels, num_classes: int, out_dir: str | Path) -> CategoryGraph:
    if taxonomy.num_classes != num_classes:
        raise PriorError(f"taxonomy has {taxonomy.num_classes} leaves but the split has K={num_classes}")
    graph = build_graph(taxonomy, list(train_labels), num_classes)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for key, fname in FILES.items():
        ust1.save(out / fname, getattr(graph, key))
    (out / "manifest.txt").write_text(graph.manifest(taxonomy), encoding="utf-8")
    return graph


def build_priors_from_dirs(taxonomy_path: str | Path, split_dir: str | Path, out_dir: str | Path) -> CategoryGraph:
    tax = Taxonomy.load(taxonomy_path)
    K = int(read_manifest(split_dir)["K"])
    if tax.num_classes != K:
        raise PriorError(f"taxonomy {taxonomy_path} has {tax.num_classes} leaves but split has K={K}")
    samples = read_split(split_dir)
    return build_priors(tax, [s.labels for s in samples], K, out_dir)


def load_priors(directory: str | Path) -> dict[str, np.ndarray]:
    d = Path(directory)
    return {key: ust1.load(d / fname) for key, fname in FILES.items() if (d / fname).exists()}
