"""Convert Planetoid-style citation bundles to the canonical layout.

A bundle is the eight files ind.<name>.{x, y, tx, ty, allx, ally, graph,
test.index}: pickled sparse feature blocks and one-hot label blocks for
the labeled/test/rest-of-graph node ranges, a pickled neighbor dict, and
a text file giving each test row's position in the full node ordering.

The output directory holds edges.tsv (unique undirected pairs),
features.csv, labels.txt (-1 for nodes without a label), and split.json,
exactly as the training engine's loader expects. Test indices are written
back to their true positions; index gaps (isolated test nodes, as in the
Citeseer bundle) get zero-filled feature and label rows, matching the
usual preprocessing of these archives.
"""

from __future__ import annotations

import json
import pickle
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__version__ = "0.1.0"

_PARTS = ("x", "y", "tx", "ty", "allx", "ally", "graph", "test.index")


class BundleError(Exception):
    """Missing file or internally inconsistent bundle."""


def _load_pickle(path: Path):
    if not path.exists():
        raise BundleError(f"missing bundle file {path}")
    with open(path, "rb") as f:
        return pickle.load(f, encoding="latin1")


def _as_dense(block, what: str) -> np.ndarray:
    if sp.issparse(block):
        return np.asarray(block.todense(), dtype=np.float64)
    arr = np.asarray(block, dtype=np.float64)
    if arr.ndim != 2:
        raise BundleError(f"{what} is not a 2-d array")
    return arr


def read_bundle(input_dir, name: str) -> dict:
    """Load and validate the eight reference files."""
    input_dir = Path(input_dir)
    raw = {}
    for part in _PARTS:
        path = input_dir / f"ind.{name}.{part}"
        if part == "test.index":
            if not path.exists():
                raise BundleError(f"missing bundle file {path}")
            raw[part] = np.array([int(line) for line in
                                  path.read_text().split()], dtype=np.int64)
        else:
            raw[part] = _load_pickle(path)
    return raw


def assemble(raw: dict) -> dict:
    """Reorder the blocks into full-graph arrays.

    Returns features (n, d), labels (n,) with -1 where no label exists,
    undirected edge list, and the train/val/test index lists.
    """
    x = _as_dense(raw["x"], "x")
    y = np.asarray(raw["y"], dtype=np.float64)
    tx = _as_dense(raw["tx"], "tx")
    ty = np.asarray(raw["ty"], dtype=np.float64)
    allx = _as_dense(raw["allx"], "allx")
    ally = np.asarray(raw["ally"], dtype=np.float64)
    test_idx = raw["test.index"]

    d = allx.shape[1]
    c = ally.shape[1]
    if x.shape[1] != d or tx.shape[1] != d:
        raise BundleError("feature blocks disagree on dimension")
    if y.shape[1] != c or ty.shape[1] != c:
        raise BundleError("label blocks disagree on class count")
    if x.shape[0] != y.shape[0] or tx.shape[0] != ty.shape[0] \
            or allx.shape[0] != ally.shape[0]:
        raise BundleError("feature/label block row counts disagree")
    if len(test_idx) != tx.shape[0]:
        raise BundleError("test.index length does not match tx rows")
    if len(np.unique(test_idx)) != len(test_idx):
        raise BundleError("test.index contains duplicate positions")

    # Gaps in the test range are isolated nodes: zero-fill their rows.
    lo, hi = int(test_idx.min()), int(test_idx.max())
    span = hi - lo + 1
    tx_full = np.zeros((span, d))
    ty_full = np.zeros((span, c))
    tx_full[test_idx - lo] = tx
    ty_full[test_idx - lo] = ty

    n = allx.shape[0] + span
    if lo != allx.shape[0]:
        raise BundleError("test range does not start where allx ends")

    features = np.vstack([allx, tx_full])
    onehot = np.vstack([ally, ty_full])
    labels = np.where(onehot.sum(axis=1) > 0,
                      onehot.argmax(axis=1), -1).astype(np.int64)

    graph = raw["graph"]
    edges = set()
    for u, neighbors in graph.items():
        u = int(u)
        if not 0 <= u < n:
            raise BundleError(f"graph node id {u} out of range [0, {n})")
        for v in neighbors:
            v = int(v)
            if not 0 <= v < n:
                raise BundleError(f"graph neighbor id {v} out of range [0, {n})")
            if u != v:
                edges.add((u, v) if u < v else (v, u))

    m = y.shape[0]
    return {
        "features": features,
        "labels": labels,
        "edges": sorted(edges),
        "train": list(range(m)),
        "test": sorted(int(i) for i in test_idx),
        "num_classes": c,
        "n": n,
    }


def write_canonical(assembled: dict, output_dir, val_size: int = 500) -> None:
    """Emit the canonical layout; output is byte-deterministic."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = len(assembled["train"])
    val = list(range(m, m + val_size))
    if val and val[-1] >= assembled["n"]:
        raise BundleError(f"validation range [{m}, {m + val_size}) exceeds "
                          f"{assembled['n']} nodes")
    overlap = set(val) & set(assembled["test"])
    if overlap:
        raise BundleError(f"validation range overlaps test indices: "
                          f"{sorted(overlap)[:5]}...")

    with open(out / "edges.tsv", "w") as f:
        for u, v in assembled["edges"]:
            f.write(f"{u}\t{v}\n")
    with open(out / "features.csv", "w") as f:
        for row in assembled["features"]:
            f.write(",".join(repr(v) for v in row.tolist()) + "\n")
    with open(out / "labels.txt", "w") as f:
        for lab in assembled["labels"].tolist():
            f.write(f"{lab}\n")
    split = {"train": assembled["train"], "val": val,
             "test": assembled["test"], "num_classes": assembled["num_classes"]}
    (out / "split.json").write_text(json.dumps(split, sort_keys=True))


def convert(input_dir, name: str, output_dir, val_size: int = 500) -> dict:
    """Full pipeline; returns summary statistics of the converted dataset."""
    assembled = assemble(read_bundle(input_dir, name))
    write_canonical(assembled, output_dir, val_size=val_size)
    return {
        "name": name,
        "n": assembled["n"],
        "d": assembled["features"].shape[1],
        "num_classes": assembled["num_classes"],
        "undirected_edges": len(assembled["edges"]),
        "train": len(assembled["train"]),
        "val": val_size,
        "test": len(assembled["test"]),
    }
