"""Dataset container, canonical on-disk format, and synthetic generators.

Canonical directory layout:
  edges.tsv     one "src<TAB>dst" per line, 0-based ids, undirected listed once
  features.csv  n lines of d comma-separated decimals, or
  features.bin  16-byte header (magic "GRFD", u32 n, u32 d, u32 reserved)
                followed by little-endian float32, row-major
  labels.txt    n lines, integer class or -1 for unknown
  split.json    {"train": [...], "val": [...], "test": [...], "num_classes": C}
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidParam, IoError
from .rng import Rng
from .sparse import CsrMatrix, DenseMatrix, build_adjacency

_BIN_MAGIC = b"GRFD"


@dataclass
class Dataset:
    adjacency: CsrMatrix        # binary, symmetric, self-loop-free
    features: DenseMatrix       # n x d float64
    labels: np.ndarray          # int64 per node, -1 = unknown
    masks: dict[str, np.ndarray]
    meta: dict

    def validate(self) -> "Dataset":
        n, d = self.features.shape
        if self.meta["n"] != n or self.meta["d"] != d:
            raise FormatError("meta does not match feature matrix shape")
        if self.meta["C"] <= 0 or d <= 0:
            raise FormatError("d and C must be positive")
        if len(self.labels) != n:
            raise FormatError("labels length does not match node count")
        if self.adjacency.n_rows != n or self.adjacency.n_cols != n:
            raise FormatError("adjacency shape does not match node count")
        if not np.all(np.isfinite(self.features)):
            raise FormatError("non-finite feature value")
        names = ("train", "val", "test")
        for a in range(len(names)):
            for b in range(a + 1, len(names)):
                if np.intersect1d(self.masks[names[a]], self.masks[names[b]]).size:
                    raise FormatError(f"masks {names[a]} and {names[b]} overlap")
        for name in names:
            ids = self.masks[name]
            if ids.size and (ids.min() < 0 or ids.max() >= n):
                raise FormatError(f"{name} mask id out of range")
            lab = self.labels[ids]
            if lab.size and (lab.min() < 0 or lab.max() >= self.meta["C"]):
                raise FormatError(f"label out of range in {name} mask")
        return self


def row_normalize(x: DenseMatrix) -> DenseMatrix:
    """Scale each nonzero row to sum 1; zero rows pass through."""
    sums = x.sum(axis=1, keepdims=True)
    safe = np.where(sums == 0, 1.0, sums)
    return x / safe


def _read_features(directory: Path) -> np.ndarray:
    csv_path = directory / "features.csv"
    bin_path = directory / "features.bin"
    if csv_path.exists():
        x = np.loadtxt(csv_path, delimiter=",", dtype=np.float64, ndmin=2)
        return x
    if bin_path.exists():
        raw = bin_path.read_bytes()
        if len(raw) < 16 or raw[:4] != _BIN_MAGIC:
            raise FormatError("features.bin header is invalid")
        n, d, _ = struct.unpack("<III", raw[4:16])
        data = np.frombuffer(raw, dtype="<f4", offset=16)
        if len(data) != n * d:
            raise FormatError("features.bin payload size mismatch")
        return data.astype(np.float64).reshape(n, d)
    raise IoError(f"no features.csv or features.bin in {directory}")


def load_canonical(directory, normalize_features: bool = True) -> Dataset:
    """Load and validate a canonical dataset directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise IoError(f"dataset directory {directory} does not exist")
    for fname in ("edges.tsv", "labels.txt", "split.json"):
        if not (directory / fname).exists():
            raise IoError(f"missing {fname} in {directory}")

    features = _read_features(directory)
    n = features.shape[0]

    labels = []
    for line in (directory / "labels.txt").read_text().splitlines():
        line = line.strip()
        if line:
            labels.append(int(line))
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != n:
        raise FormatError(f"labels.txt has {len(labels)} lines, expected {n}")

    edges = []
    for line in (directory / "edges.tsv").read_text().splitlines():
        line = line.strip()
        if line:
            u, v = line.split("\t")
            edges.append((int(u), int(v)))
    adjacency = build_adjacency(edges, n, symmetrize=True)

    try:
        split = json.loads((directory / "split.json").read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"split.json is not valid JSON: {e}") from e
    try:
        masks = {name: np.asarray(sorted(split[name]), dtype=np.int64)
                 for name in ("train", "val", "test")}
        n_classes = int(split["num_classes"])
    except KeyError as e:
        raise FormatError(f"split.json missing key {e}") from e

    if normalize_features:
        features = row_normalize(features)

    ds = Dataset(
        adjacency=adjacency,
        features=features,
        labels=labels,
        masks=masks,
        meta={"name": directory.name, "n": n, "d": features.shape[1], "C": n_classes},
    )
    return ds.validate()


def save_canonical(dataset: Dataset, directory, features_format: str = "csv") -> None:
    """Write the canonical layout; CSV features round-trip exactly."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    lines = []
    adj = dataset.adjacency
    for i in range(adj.n_rows):
        cols, _ = adj.row_slice(i)
        for j in cols[cols > i]:
            lines.append(f"{i}\t{j}")
    (directory / "edges.tsv").write_text("\n".join(lines) + ("\n" if lines else ""))

    if features_format == "csv":
        with open(directory / "features.csv", "w") as f:
            for row in dataset.features:
                f.write(",".join(repr(v) for v in row.tolist()) + "\n")
    elif features_format == "bin":
        n, d = dataset.features.shape
        with open(directory / "features.bin", "wb") as f:
            f.write(_BIN_MAGIC + struct.pack("<III", n, d, 0))
            f.write(dataset.features.astype("<f4").tobytes())
    else:
        raise InvalidParam(f"unknown features format {features_format!r}")

    (directory / "labels.txt").write_text(
        "\n".join(str(v) for v in dataset.labels.tolist()) + "\n")
    split = {name: dataset.masks[name].tolist() for name in ("train", "val", "test")}
    split["num_classes"] = dataset.meta["C"]
    (directory / "split.json").write_text(json.dumps(split))


def synthetic_sbm(n: int, blocks: int, p_in: float, p_out: float, d: int,
                  seed: int) -> Dataset:
    """Stochastic block model with block-correlated Gaussian features.

    Labels are block ids; each block contributes a mean vector whose
    entries scale like 1/sqrt(d), so plain features separate the blocks
    only weakly and neighborhood averaging carries most of the signal.
    Splits are 10/10/80 stratified by block.
    """
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise InvalidParam("edge probabilities must be in [0, 1]")
    if blocks < 1 or n < blocks:
        raise InvalidParam("need at least one node per block")
    rng = Rng((seed, 0x5B3))
    labels = np.arange(n, dtype=np.int64) % blocks

    u = rng.uniform((n, n))
    prob = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    upper = np.triu(u < prob, k=1)
    src, dst = np.nonzero(upper)
    adjacency = build_adjacency(list(zip(src.tolist(), dst.tolist())), n)

    means = rng.normal((blocks, d), scale=0.85 / np.sqrt(d))
    features = means[labels] + rng.normal((n, d))

    order = np.arange(n)
    rng.shuffle(order)
    train, val, test = [], [], []
    for b in range(blocks):
        members = order[labels[order] == b]
        n_tr = max(1, len(members) // 10)
        n_va = max(1, len(members) // 10)
        train.extend(members[:n_tr])
        val.extend(members[n_tr:n_tr + n_va])
        test.extend(members[n_tr + n_va:])
    masks = {"train": np.asarray(sorted(train), dtype=np.int64),
             "val": np.asarray(sorted(val), dtype=np.int64),
             "test": np.asarray(sorted(test), dtype=np.int64)}

    ds = Dataset(adjacency, features, labels, masks,
                 {"name": "sbm", "n": n, "d": d, "C": blocks})
    return ds.validate()
