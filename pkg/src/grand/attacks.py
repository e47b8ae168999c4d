"""Structural poisoning: random fake edges added before training.

The perturbation rate is measured against the clean undirected edge
count; the attacked dataset keeps its features, labels, and masks, so
accuracy remains comparable on the original test split.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .datasets import Dataset
from .errors import InvalidParam
from .rng import Rng
from .sparse import build_adjacency, sym_normalize
from .trainer import Hyperparams, evaluate, fit, predict


@dataclass(frozen=True)
class AttackSpec:
    rate: float   # fake edges to add, as a fraction of |E|
    seed: int

    def __post_init__(self):
        if self.rate < 0:
            raise InvalidParam("attack rate must be >= 0")


def random_add_edges(dataset: Dataset, spec: AttackSpec) -> Dataset:
    """Add floor(rate * |E|) distinct random non-edges, undirected.

    Candidate pairs exclude self-loops and existing edges; the added set
    is a deterministic function of (seed, rate).
    """
    n = dataset.meta["n"]
    adj = dataset.adjacency
    n_edges = adj.nnz // 2
    n_add = int(spec.rate * n_edges)
    if n_add == 0:
        return dataset
    possible = n * (n - 1) // 2 - n_edges
    if n_add > possible:
        raise InvalidParam(f"cannot add {n_add} edges; only {possible} slots free")

    existing = set()
    for i in range(adj.n_rows):
        cols, _ = adj.row_slice(i)
        for j in cols[cols > i]:
            existing.add(i * n + int(j))

    rng = Rng((spec.seed, int(spec.rate * 1_000_000), 0xADD))
    added = set()
    while len(added) < n_add:
        batch = max(64, 2 * (n_add - len(added)))
        us = rng.integers(0, n, batch)
        vs = rng.integers(0, n, batch)
        for u, v in zip(us.tolist(), vs.tolist()):
            if u == v:
                continue
            if u > v:
                u, v = v, u
            code = u * n + v
            if code in existing or code in added:
                continue
            added.add(code)
            if len(added) == n_add:
                break

    edges = [(c // n, c % n) for c in existing | added]
    adjacency = build_adjacency(edges, n, symmetrize=True)
    return Dataset(adjacency, dataset.features, dataset.labels,
                   dataset.masks, dict(dataset.meta))


def robustness_sweep(dataset: Dataset, hp: Hyperparams, rates: list[float],
                     seeds: list[int]) -> list[dict]:
    """Retrain from scratch per (rate, seed); accuracy on the clean test mask."""
    if not rates:
        raise InvalidParam("rates must be nonempty")
    rows = []
    for rate in rates:
        for seed in seeds:
            attacked = random_add_edges(dataset, AttackSpec(rate=rate, seed=seed))
            run_hp = replace(hp, seed=seed)
            params, _ = fit(attacked, run_hp)
            a_hat = sym_normalize(attacked.adjacency)
            probs = predict(params, a_hat, attacked.features, run_hp.prop_steps)
            acc = evaluate(probs, dataset.labels, dataset.masks["test"])
            rows.append({"rate": rate, "seed": seed, "test_acc": acc})
    return rows


def sweep_to_csv(rows: list[dict], path) -> None:
    with open(path, "w") as f:
        f.write("rate,seed,test_acc\n")
        for r in rows:
            f.write(f"{r['rate']},{r['seed']},{r['test_acc']!r}\n")
