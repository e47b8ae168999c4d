"""Over-smoothing measurement and the propagation-depth sweep.

The gap statistic is the mean cosine distance between representation
pairs with different labels (remote) minus pairs sharing a label
(neighboring). Indistinguishable representations drive it toward zero,
so larger is better. Pairs are sampled uniformly per category to bound
cost on large graphs; rows with zero norm are excluded and counted.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidParam
from .mlp import _BN_EPS, ModelParams
from .rng import Rng
from .sparse import CsrMatrix, DenseMatrix, mixed_order_propagate, sym_normalize
from .trainer import Hyperparams, evaluate, fit, predict


@dataclass(frozen=True)
class MadgapReport:
    mad_remote: float     # mean cosine distance, different-label pairs
    mad_neighbor: float   # mean cosine distance, same-label pairs
    gap: float
    pairs_sampled: int
    zero_rows_skipped: int


def _sample_pair_mean(unit: np.ndarray, labels: np.ndarray, want_same: bool,
                      n_pairs: int, rng: Rng) -> float:
    """Mean cosine distance over n_pairs uniform pairs of one category."""
    total = 0.0
    accepted = 0
    n = len(labels)
    while accepted < n_pairs:
        batch = max(1024, 2 * (n_pairs - accepted))
        i = rng.integers(0, n, batch)
        j = rng.integers(0, n, batch)
        ok = i != j
        ok &= (labels[i] == labels[j]) if want_same else (labels[i] != labels[j])
        i, j = i[ok][:n_pairs - accepted], j[ok][:n_pairs - accepted]
        total += float((1.0 - (unit[i] * unit[j]).sum(axis=1)).sum())
        accepted += len(i)
    return total / n_pairs


def madgap(h: DenseMatrix, labels: np.ndarray, n_pairs: int, rng: Rng) -> MadgapReport:
    """Sampled remote-minus-neighbor cosine distance gap."""
    if n_pairs < 1:
        raise InvalidParam("n_pairs must be >= 1")
    norms = np.linalg.norm(h, axis=1)
    valid = norms > 0
    skipped = int((~valid).sum())
    h, labels, norms = h[valid], np.asarray(labels)[valid], norms[valid]

    counts = np.bincount(labels[labels >= 0]) if len(labels) else np.array([])
    if not np.any(counts >= 2):
        raise InvalidParam("need at least one class with two or more nodes")
    if (counts >= 1).sum() < 2:
        raise InvalidParam("need at least two classes for remote pairs")

    unit = h / norms[:, None]
    remote = _sample_pair_mean(unit, labels, want_same=False, n_pairs=n_pairs, rng=rng)
    neighbor = _sample_pair_mean(unit, labels, want_same=True, n_pairs=n_pairs, rng=rng)
    return MadgapReport(mad_remote=remote, mad_neighbor=neighbor,
                        gap=remote - neighbor, pairs_sampled=2 * n_pairs,
                        zero_rows_skipped=skipped)


def hidden_representation(params: ModelParams, a_hat: CsrMatrix, x: DenseMatrix,
                          k: int) -> np.ndarray:
    """Eval-path first-layer output after ReLU, on full propagated features."""
    x_bar = mixed_order_propagate(a_hat, x, k)
    z1 = x_bar @ params.w1 + params.b1
    if params.bn is not None:
        bn = params.bn
        z1 = bn.gamma * (z1 - bn.running_mean) / np.sqrt(bn.running_var + _BN_EPS) + bn.beta
    return z1 * (z1 > 0)


def oversmoothing_sweep(dataset, hp_base: Hyperparams, k_values: list[int],
                        seeds: list[int] | None = None, n_pairs: int = 100_000,
                        ) -> list[dict]:
    """Train once per (K, seed); report test accuracy and the gap statistic."""
    if not k_values:
        raise InvalidParam("k_values must be nonempty")
    seeds = seeds if seeds is not None else [hp_base.seed]
    a_hat = sym_normalize(dataset.adjacency)
    rows = []
    for k in k_values:
        for seed in seeds:
            hp = replace(hp_base, prop_steps=k, seed=seed)
            params, _ = fit(dataset, hp, a_hat=a_hat)
            probs = predict(params, a_hat, dataset.features, k)
            acc = evaluate(probs, dataset.labels, dataset.masks["test"])
            h = hidden_representation(params, a_hat, dataset.features, k)
            report = madgap(h, dataset.labels, n_pairs, Rng((seed, 0x3AD)))
            rows.append({"k": k, "seed": seed, "test_acc": acc,
                         "madgap": report.gap})
    return rows


def sweep_to_csv(rows: list[dict], path) -> None:
    with open(path, "w") as f:
        f.write("k,seed,test_acc,madgap\n")
        for r in rows:
            f.write(f"{r['k']},{r['seed']},{r['test_acc']!r},{r['madgap']!r}\n")
