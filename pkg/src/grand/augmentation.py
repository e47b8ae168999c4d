"""Stochastic perturbation of features or adjacency, then propagation.

Each call produces one augmentation of the node features. Perturbation
draws follow a fixed order (node rows, row-major elements, or CSR entries)
so a recorded mask can replay any augmentation exactly. Survivors are
rescaled by 1/(1 - delta), which keeps every perturbed matrix equal to its
input in expectation; a drop probability of exactly zero is the inference
path and consumes no randomness at all.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParam
from .rng import Rng
from .sparse import CsrMatrix, DenseMatrix, mixed_order_propagate


class PerturbKind(enum.Enum):
    DROP_NODE = "drop_node"
    DROPOUT = "dropout"
    DROP_EDGE = "drop_edge"


@dataclass(frozen=True)
class PerturbMethod:
    kind: PerturbKind
    delta: float

    def __post_init__(self):
        _check_delta(self.delta)


def _check_delta(delta: float) -> None:
    if not 0.0 <= delta < 1.0:
        raise InvalidParam(f"drop probability must be in [0, 1), got {delta}")


def drop_node(x: DenseMatrix, delta: float, rng: Rng | None = None,
              mask: np.ndarray | None = None) -> DenseMatrix:
    """Zero whole feature rows with probability delta, rescale survivors.

    Consumes exactly n Bernoulli draws in row order. Passing `mask`
    (0/1 per row) replays a recorded perturbation instead of drawing.
    """
    _check_delta(delta)
    if delta == 0.0 and mask is None:
        return x
    if mask is None:
        mask = rng.bernoulli(1.0 - delta, x.shape[0])
    return x * (mask / (1.0 - delta))[:, None]


def dropout_features(x: DenseMatrix, delta: float, rng: Rng | None = None,
                     mask: np.ndarray | None = None) -> DenseMatrix:
    """Elementwise dropout; n*d draws in row-major order."""
    _check_delta(delta)
    if delta == 0.0 and mask is None:
        return x
    if mask is None:
        mask = rng.bernoulli(1.0 - delta, x.shape)
    return x * (mask / (1.0 - delta))


def drop_edge(a_hat: CsrMatrix, delta: float, rng: Rng) -> CsrMatrix:
    """Corrupt the operator by dropping stored entries independently.

    Each stored nonzero is kept with probability 1 - delta (one draw per
    entry, CSR order) and rescaled by 1/(1 - delta); the sparsity pattern
    shrinks and symmetry is not preserved. Survivor rescaling keeps the
    operator equal to the input in expectation.
    """
    _check_delta(delta)
    if delta == 0.0:
        return a_hat
    keep = rng.bernoulli(1.0 - delta, a_hat.nnz).astype(bool)
    row_ids = np.repeat(np.arange(a_hat.n_rows), np.diff(a_hat.row_ptr))
    row_ptr = np.zeros(a_hat.n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(row_ids[keep], minlength=a_hat.n_rows), out=row_ptr[1:])
    return CsrMatrix(
        a_hat.n_rows, a_hat.n_cols,
        row_ptr,
        a_hat.col_idx[keep],
        a_hat.values[keep] / (1.0 - delta),
    )


def augment(a_hat: CsrMatrix, x: DenseMatrix, method: PerturbMethod, k: int,
            rng: Rng | None = None) -> DenseMatrix:
    """One random-propagation augmentation: perturb, then propagate K steps."""
    if method.kind is PerturbKind.DROP_NODE:
        return mixed_order_propagate(a_hat, drop_node(x, method.delta, rng), k)
    if method.kind is PerturbKind.DROPOUT:
        return mixed_order_propagate(a_hat, dropout_features(x, method.delta, rng), k)
    if method.kind is PerturbKind.DROP_EDGE:
        if method.delta == 0.0:
            return mixed_order_propagate(a_hat, x, k)
        return mixed_order_propagate(drop_edge(a_hat, method.delta, rng), x, k)
    raise InvalidParam(f"unknown perturbation kind {method.kind}")
