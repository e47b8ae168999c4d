"""Supervised loss, sharpened prediction center, and consistency penalty.

Reductions are means: the cross-entropy term averages over labeled nodes
(and over the S augmentations), the consistency term averages over all
nodes. The sharpened center is a constant target; no gradient flows back
through the averaging or the temperature transform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParam, ShapeError
from .sparse import DenseMatrix

_LOG_FLOOR = 1e-12  # probability clamp before log


@dataclass(frozen=True)
class SharpenedCenter:
    """Low-entropy pseudo-label target; treated as constant in gradients."""

    probs: np.ndarray
    temperature: float


def supervised_loss(preds: list[np.ndarray], y_onehot: np.ndarray,
                    labeled: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Cross-entropy averaged over augmentations and labeled nodes.

    Returns the scalar and the gradient w.r.t. each prediction matrix;
    gradients are zero on unlabeled rows.
    """
    if len(labeled) == 0:
        raise InvalidParam("labeled set is empty")
    s = len(preds)
    m = len(labeled)
    y_lab = y_onehot[labeled]
    value = 0.0
    grads = []
    for p in preds:
        p_lab = np.maximum(p[labeled], _LOG_FLOOR)
        value -= float((y_lab * np.log(p_lab)).sum()) / (s * m)
        g = np.zeros_like(p)
        g[labeled] = -y_lab / p_lab / (s * m)
        grads.append(g)
    return value, grads


def average_predictions(preds: list[np.ndarray]) -> np.ndarray:
    """Elementwise mean across the S prediction matrices."""
    if not preds:
        raise InvalidParam("need at least one prediction matrix")
    first = preds[0].shape
    if any(p.shape != first for p in preds):
        raise ShapeError("prediction matrices disagree in shape")
    return sum(preds) / len(preds)


def sharpen(center: np.ndarray, temperature: float) -> SharpenedCenter:
    """Temperature power transform: rows of p^(1/T), renormalized.

    Preserves the per-row argmax and never increases row entropy; T = 1
    is the identity.
    """
    if not 0.0 < temperature <= 1.0:
        raise InvalidParam(f"temperature must be in (0, 1], got {temperature}")
    if temperature == 1.0:
        return SharpenedCenter(center, temperature)
    powered = center ** (1.0 / temperature)
    return SharpenedCenter(powered / powered.sum(axis=1, keepdims=True), temperature)


def consistency_loss(preds: list[np.ndarray], center: SharpenedCenter,
                     ) -> tuple[float, list[np.ndarray]]:
    """Mean squared L2 distance from each prediction to the sharpened center.

    Gradients flow only into the predictions: for each augmentation the
    gradient is (2 / (S * n)) * (pred - center).
    """
    s = len(preds)
    n = preds[0].shape[0]
    value = 0.0
    grads = []
    for p in preds:
        diff = p - center.probs
        value += float(np.square(diff).sum()) / (s * n)
        grads.append((2.0 / (s * n)) * diff)
    return value, grads


def total_loss(sup: float, con: float, lam: float) -> float:
    if lam < 0:
        raise InvalidParam("consistency coefficient must be >= 0")
    return sup + lam * con


def probs_grad_to_logits_grad(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """Pull a probability-space gradient back through the softmax."""
    inner = (dprobs * probs).sum(axis=1, keepdims=True)
    return probs * (dprobs - inner)


def fused_softmax_ce_grad(probs: np.ndarray, y_onehot: np.ndarray,
                          labeled: np.ndarray, s: int) -> np.ndarray:
    """d(L_sup)/d(logits) via the stable probs-minus-onehot identity."""
    g = np.zeros_like(probs)
    m = len(labeled)
    g[labeled] = (probs[labeled] - y_onehot[labeled]) / (s * m)
    return g
