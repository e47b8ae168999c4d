"""Monte-Carlo verification of the closed-form regularizers.

Setting: a single sigmoid output layer over propagated features,
z = sigmoid(Abar @ X @ W), binary labels on the first m nodes, and
node-level (or elementwise) feature dropping with survivor rescale.
The closed forms below are Taylor approximations of the expected
consistency and perturbed-classification losses, so the checks are
convergence tests: the relative error must shrink as the weight scale
(hence the perturbation of the sigmoid input) shrinks.

Everything here is test-scale: the averaged propagation operator is
materialized densely, guarded to at most 64 nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

from .errors import InvalidParam, TooLarge
from .rng import Rng
from .sparse import CsrMatrix, DenseMatrix, densify

_MAX_NODES = 64
_MC_BATCH = 4096


@dataclass(frozen=True)
class BinarySetting:
    a_bar: np.ndarray     # dense averaged propagation operator, n x n
    x: np.ndarray         # n x d features
    w: np.ndarray         # weight vector, length d
    y: np.ndarray         # binary labels for the first m nodes
    delta: float

    def __post_init__(self):
        n = self.a_bar.shape[0]
        if n > _MAX_NODES:
            raise TooLarge(f"dense operator limited to {_MAX_NODES} nodes")
        if self.a_bar.shape != (n, n) or self.x.shape[0] != n:
            raise InvalidParam("operator and feature shapes disagree")
        if len(self.y) > n:
            raise InvalidParam("more labels than nodes")
        if not 0.0 <= self.delta < 1.0:
            raise InvalidParam("delta must be in [0, 1)")

    @property
    def m(self) -> int:
        return len(self.y)


def make_binary_setting(a_hat: CsrMatrix, x: DenseMatrix, w: np.ndarray,
                        y: np.ndarray, delta: float, k: int) -> BinarySetting:
    """Materialize Abar = (1/(K+1)) sum of dense operator powers."""
    if a_hat.n_rows > _MAX_NODES:
        raise TooLarge(f"dense operator limited to {_MAX_NODES} nodes")
    dense = densify(a_hat)
    acc = np.eye(a_hat.n_rows)
    cur = np.eye(a_hat.n_rows)
    for _ in range(k):
        cur = cur @ dense
        acc += cur
    return BinarySetting(acc / (k + 1), np.asarray(x, dtype=np.float64),
                         np.asarray(w, dtype=np.float64),
                         np.asarray(y, dtype=np.float64), delta)


def _clean_outputs(setting: BinarySetting) -> tuple[np.ndarray, np.ndarray]:
    """(xw, z): per-node feature projections and unperturbed sigmoids."""
    xw = setting.x @ setting.w
    z = sigmoid(setting.a_bar @ xw)
    return xw, z


def variance_dropnode(setting: BinarySetting) -> np.ndarray:
    """Per-node variance of the sigmoid input under node dropping."""
    xw, _ = _clean_outputs(setting)
    c = setting.delta / (1.0 - setting.delta)
    return c * (setting.a_bar ** 2) @ (xw ** 2)


def variance_dropout(setting: BinarySetting) -> np.ndarray:
    """Per-node variance of the sigmoid input under elementwise dropping."""
    c = setting.delta / (1.0 - setting.delta)
    q = ((setting.x * setting.w) ** 2).sum(axis=1)
    return c * (setting.a_bar ** 2) @ q


def reg_consistency_dropnode(setting: BinarySetting) -> float:
    """Closed-form consistency regularizer for node dropping."""
    _, z = _clean_outputs(setting)
    weights = (z * (1.0 - z)) ** 2
    return float(weights @ variance_dropnode(setting))


def reg_consistency_dropout(setting: BinarySetting) -> float:
    """Closed-form consistency regularizer for elementwise dropping.

    Coincides with the node-dropping value at d = 1. For d > 1 neither
    variant dominates in general: node dropping sees the squared summed
    contribution (sum_h c_h)^2 per row while elementwise dropping sees
    sum_h c_h^2, and the order flips with the sign structure of c.
    """
    _, z = _clean_outputs(setting)
    weights = (z * (1.0 - z)) ** 2
    return float(weights @ variance_dropout(setting))


def reg_supervised_dropnode(setting: BinarySetting) -> float:
    """Closed-form supervised-loss regularizer; labeled nodes only."""
    _, z = _clean_outputs(setting)
    m = setting.m
    weights = z[:m] * (1.0 - z[:m])
    return float(0.5 * weights @ variance_dropnode(setting)[:m])


def _perturbed_inputs(setting: BinarySetting, masks: np.ndarray) -> np.ndarray:
    """Sigmoid inputs for a batch of node masks, shape (batch, n)."""
    xw = setting.x @ setting.w
    scaled = masks * (xw / (1.0 - setting.delta))
    return scaled @ setting.a_bar.T


def _rel_error(mc: float, closed: float) -> float:
    if closed == 0.0:
        return 0.0 if abs(mc) < 1e-12 else float("inf")
    return abs(mc - closed) / abs(closed)


def mc_theorem1(setting: BinarySetting, n_samples: int, rng: Rng) -> dict:
    """Sampled E[L_con] for paired node-drop draws vs. the closed form.

    L_con here is the two-augmentation form (1/2) sum_i (z1_i - z2_i)^2,
    whose expectation the closed form approximates to third order in the
    input perturbation.
    """
    if n_samples < 1000:
        raise InvalidParam("need at least 1000 samples")
    closed = reg_consistency_dropnode(setting)
    total = total_sq = 0.0
    done = 0
    n = setting.a_bar.shape[0]
    while done < n_samples:
        b = min(_MC_BATCH, n_samples - done)
        z1 = sigmoid(_perturbed_inputs(setting, rng.bernoulli(1 - setting.delta, (b, n))))
        z2 = sigmoid(_perturbed_inputs(setting, rng.bernoulli(1 - setting.delta, (b, n))))
        vals = 0.5 * ((z1 - z2) ** 2).sum(axis=1)
        total += float(vals.sum())
        total_sq += float((vals ** 2).sum())
        done += b
    mc = total / n_samples
    var = max(total_sq / n_samples - mc ** 2, 0.0)
    return {
        "theorem": 1,
        "mc": mc,
        "closed_form": closed,
        "rel_error": _rel_error(mc, closed),
        "mc_standard_error": float(np.sqrt(var / n_samples)),
        "n_samples": n_samples,
        "perturbation_std_max": float(np.sqrt(variance_dropnode(setting).max(initial=0.0))),
    }


def mc_theorem2(setting: BinarySetting, n_samples: int, rng: Rng) -> dict:
    """Sampled E[perturbed CE] - clean CE vs. the closed-form regularizer.

    Per-sample cross-entropy is softplus(u) - y*u over the labeled prefix.
    The exactly-zero-mean first-order term sum_i (z_i - y_i)(u~_i - u_i)
    is subtracted from each sample as a control variate; without it the
    estimator noise scales like the perturbation itself and would swamp
    the quadratic quantity being verified.
    """
    if n_samples < 1000:
        raise InvalidParam("need at least 1000 samples")
    closed = reg_supervised_dropnode(setting)
    xw, z = _clean_outputs(setting)
    m, y = setting.m, setting.y
    u0 = (setting.a_bar @ xw)[:m]
    l_org = float((np.logaddexp(0.0, u0) - y * u0).sum())

    total = total_sq = 0.0
    done = 0
    n = setting.a_bar.shape[0]
    while done < n_samples:
        b = min(_MC_BATCH, n_samples - done)
        u = _perturbed_inputs(setting, rng.bernoulli(1 - setting.delta, (b, n)))[:, :m]
        losses = (np.logaddexp(0.0, u) - y * u).sum(axis=1)
        first_order = ((z[:m] - y) * (u - u0)).sum(axis=1)
        vals = losses - l_org - first_order
        total += float(vals.sum())
        total_sq += float((vals ** 2).sum())
        done += b
    mc = total / n_samples
    var = max(total_sq / n_samples - mc ** 2, 0.0)
    return {
        "theorem": 2,
        "mc": mc,
        "closed_form": closed,
        "rel_error": _rel_error(mc, closed),
        "mc_standard_error": float(np.sqrt(var / n_samples)),
        "n_samples": n_samples,
        "clean_loss": l_org,
        "perturbation_std_max": float(np.sqrt(variance_dropnode(setting).max(initial=0.0))),
    }


def mc_variance(setting: BinarySetting, kind: str, n_samples: int, rng: Rng) -> dict:
    """Per-node moments of the perturbed sigmoid input.

    Returns sample variance and mean deviation from the clean input, each
    with a standard error; the variance SE uses the empirical fourth
    central moment, SE(var_i) = sqrt((m4_i - m2_i^2) / N).
    """
    if kind not in ("drop_node", "dropout"):
        raise InvalidParam(f"unknown perturbation kind {kind!r}")
    n, d = setting.x.shape
    xw, _ = _clean_outputs(setting)
    u0 = setting.a_bar @ xw
    s1 = np.zeros(n)
    s2 = np.zeros(n)
    s4 = np.zeros(n)
    done = 0
    scale = 1.0 / (1.0 - setting.delta)
    m_elem = setting.x * setting.w
    while done < n_samples:
        b = min(_MC_BATCH, n_samples - done)
        if kind == "drop_node":
            u = _perturbed_inputs(setting, rng.bernoulli(1 - setting.delta, (b, n)))
        else:
            eps = rng.bernoulli(1 - setting.delta, (b, n, d))
            u = ((eps * m_elem).sum(axis=2) * scale) @ setting.a_bar.T
        dev = u - u0  # exact mean of u: E[perturbed features] is the input
        s1 += dev.sum(axis=0)
        s2 += (dev ** 2).sum(axis=0)
        s4 += (dev ** 4).sum(axis=0)
        done += b
    mean_dev = s1 / n_samples
    var = s2 / n_samples - mean_dev ** 2
    m4 = s4 / n_samples
    return {
        "var": var,
        "var_se": np.sqrt(np.maximum(m4 - var ** 2, 0.0) / n_samples),
        "mean_dev": mean_dev,
        "mean_se": np.sqrt(np.maximum(var, 0.0) / n_samples),
    }
