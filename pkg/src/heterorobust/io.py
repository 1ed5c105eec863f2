"""On-disk formats: dataset directories, split files and perturbation files.

A dataset directory holds three files:

``edges.txt``
    one undirected edge per line, ``u<TAB>v``, 0-indexed, each pair once.
``labels.txt``
    ``node<TAB>label`` per line; defines the node count.
``features.csv``
    dense CSV, row ``i`` is node ``i``. Optional; missing means no features.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .graph import LabeledGraph, SparseAdjacency

EDGES_FILE = "edges.txt"
LABELS_FILE = "labels.txt"
FEATURES_FILE = "features.csv"


def save_dataset(g: LabeledGraph, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / EDGES_FILE, "w", encoding="utf-8") as fh:
        for u, v in g.adjacency.edge_array():
            fh.write(f"{u}\t{v}\n")
    with open(d / LABELS_FILE, "w", encoding="utf-8") as fh:
        for i, y in enumerate(g.labels):
            fh.write(f"{i}\t{y}\n")
    if g.features.shape[1]:
        np.savetxt(d / FEATURES_FILE, g.features, delimiter=",", fmt="%.17g")
    if g.meta:
        with open(d / "meta.json", "w", encoding="utf-8") as fh:
            json.dump(g.meta, fh, indent=2, sort_keys=True, default=_jsonable)
    return d


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _read_pairs(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected two tab-separated integers")
            rows.append((int(parts[0]), int(parts[1])))
    return np.asarray(rows, dtype=np.int64).reshape(-1, 2)


def load_dataset(directory, num_classes=None) -> LabeledGraph:
    d = Path(directory)
    lab = _read_pairs(d / LABELS_FILE)
    n = int(lab[:, 0].max()) + 1 if lab.size else 0
    labels = np.full(n, -1, dtype=np.int64)
    labels[lab[:, 0]] = lab[:, 1]
    if np.any(labels < 0):
        raise ValueError(f"{d / LABELS_FILE}: labels missing for some nodes")
    edges = _read_pairs(d / EDGES_FILE)
    # each pair listed once; tolerate files that list both directions
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    if (d / FEATURES_FILE).exists():
        feats = np.loadtxt(d / FEATURES_FILE, delimiter=",", dtype=np.float64, ndmin=2)
    else:
        feats = np.zeros((n, 0))
    k = int(num_classes) if num_classes is not None else int(labels.max()) + 1
    meta = {}
    if (d / "meta.json").exists():
        meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
    return LabeledGraph(SparseAdjacency.from_edges(n, edges), feats, labels, k, meta)


def save_splits(splits, path):
    payload = {"seed": splits.seed, "train": list(map(int, splits.train)),
               "val": list(map(int, splits.val)), "test": list(map(int, splits.test))}
    Path(path).write_text(json.dumps(payload, indent=1), encoding="utf-8")


def load_splits(path):
    from .harness import SplitAssignment

    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return SplitAssignment(np.asarray(data["train"], dtype=np.int64), np.asarray(data["val"], dtype=np.int64),
                           np.asarray(data["test"], dtype=np.int64), data.get("seed"))


def save_perturbation(P, path):
    with open(path, "w", encoding="utf-8") as fh:
        for u, v, sign in P.flips:
            fh.write(f"{'+' if sign > 0 else '-'} {u} {v}\n")


def load_perturbation(path):
    from .attacks import Perturbation

    flips = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            s, u, v = line.split()
            if s not in "+-":
                raise ValueError(f"{path}:{lineno}: sign must be '+' or '-'")
            flips.append((int(u), int(v), 1 if s == "+" else -1))
    return Perturbation(tuple(flips))
