import numpy as np
import pytest

from grand.sparse import CsrMatrix, build_adjacency, csr_from_coo, sym_normalize


@pytest.fixture
def path3():
    """3-node path 0-1-2, normalized: degrees with self-loop are (2, 3, 2)."""
    return sym_normalize(build_adjacency([(0, 1), (1, 2)], 3))


def dense_oracle_matmul(a_dense: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Triple-loop dense product; deliberately independent of the kernel."""
    n, m = a_dense.shape
    d = x.shape[1]
    out = np.zeros((n, d))
    for i in range(n):
        for j in range(m):
            if a_dense[i, j] != 0.0:
                for c in range(d):
                    out[i, c] += a_dense[i, j] * x[j, c]
    return out


def dense_mixed_order(a_dense: np.ndarray, x: np.ndarray, k: int) -> np.ndarray:
    """Oracle via explicit dense matrix powers."""
    total = np.zeros_like(a_dense)
    for p in range(k + 1):
        total += np.linalg.matrix_power(a_dense, p)
    return (total / (k + 1)) @ x


def random_csr(n_rows: int, n_cols: int, density: float, seed: int) -> CsrMatrix:
    gen = np.random.default_rng(seed)
    mask = gen.random((n_rows, n_cols)) < density
    rows, cols = np.nonzero(mask)
    vals = gen.standard_normal(len(rows))
    return csr_from_coo(rows, cols, vals, n_rows, n_cols)


def random_normalized_graph(n: int, p: float, seed: int):
    """Random symmetric graph, already normalized."""
    gen = np.random.default_rng(seed)
    upper = np.triu(gen.random((n, n)) < p, k=1)
    src, dst = np.nonzero(upper)
    return sym_normalize(build_adjacency(list(zip(src, dst)), n))
