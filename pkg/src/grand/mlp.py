"""Two-layer perceptron with hand-written forward and backward passes.

Layer order: input dropout, linear, optional batch normalization, ReLU,
hidden dropout, linear, softmax. Dropout is inverted (survivors scaled at
train time), ReLU takes subgradient 0 at exactly 0, and all arithmetic is
float64. A training forward returns a cache holding every intermediate
(including the realized dropout masks) so the backward pass is exact and
gradient checks can replay the same stochastic pass with frozen masks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParam, IoError, NumericalError, ShapeError, StateError
from .rng import Rng
from .sparse import DenseMatrix

_BN_EPS = 1e-8  # f64 throughout, so a tight epsilon keeps normalized variance at 1
_BN_MOMENTUM = 0.9  # running = momentum * running + (1 - momentum) * batch


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray


@dataclass
class ModelParams:
    """Weights of the classifier; `bn` present iff batch norm is enabled."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    bn: BatchNormState | None = None

    def copy(self) -> "ModelParams":
        bn = None
        if self.bn is not None:
            bn = BatchNormState(self.bn.gamma.copy(), self.bn.beta.copy(),
                                self.bn.running_mean.copy(), self.bn.running_var.copy())
        return ModelParams(self.w1.copy(), self.b1.copy(),
                           self.w2.copy(), self.b2.copy(), bn)

    def trainable(self) -> list[tuple[str, np.ndarray]]:
        """Adam-updated arrays; running statistics are excluded."""
        items = [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]
        if self.bn is not None:
            items += [("gamma", self.bn.gamma), ("beta", self.bn.beta)]
        return items


@dataclass
class ParamGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None

    def named(self) -> dict[str, np.ndarray]:
        out = {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}
        if self.gamma is not None:
            out["gamma"] = self.gamma
            out["beta"] = self.beta
        return out

    def add_(self, other: "ParamGrads") -> None:
        self.w1 += other.w1
        self.b1 += other.b1
        self.w2 += other.w2
        self.b2 += other.b2
        if self.gamma is not None:
            self.gamma += other.gamma
            self.beta += other.beta


@dataclass
class DropoutMasks:
    """Unscaled 0/1 masks from one training forward, for exact replay."""

    input_mask: np.ndarray | None
    hidden_mask: np.ndarray | None


@dataclass
class ForwardCache:
    params: ModelParams
    x_in: np.ndarray
    relu_in: np.ndarray
    h_drop: np.ndarray
    probs: np.ndarray
    masks: DropoutMasks
    dropout_input: float
    dropout_hidden: float
    use_bn: bool
    bn_x_hat: np.ndarray | None = None
    bn_inv_std: np.ndarray | None = None


@dataclass
class AdamState:
    """First/second moments per trainable array plus the shared step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        m = {k: np.zeros_like(a) for k, a in params.trainable()}
        v = {k: np.zeros_like(a) for k, a in params.trainable()}
        return cls(m=m, v=v)


def glorot_init(d: int, h: int, c: int, rng: Rng, use_bn: bool = False) -> ModelParams:
    """Glorot-normal weights (std sqrt(2/(fan_in+fan_out))), zero biases."""
    if min(d, h, c) < 1:
        raise InvalidParam("layer sizes must be >= 1")
    w1 = rng.normal((d, h), scale=np.sqrt(2.0 / (d + h)))
    w2 = rng.normal((h, c), scale=np.sqrt(2.0 / (h + c)))
    bn = None
    if use_bn:
        bn = BatchNormState(np.ones(h), np.zeros(h), np.zeros(h), np.ones(h))
    return ModelParams(w1, np.zeros(h), w2, np.zeros(c), bn)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(x: DenseMatrix, params: ModelParams, mode: str,
            dropout_input: float, dropout_hidden: float, use_bn: bool,
            rng: Rng | None = None, masks: DropoutMasks | None = None,
            ) -> tuple[np.ndarray, ForwardCache | None]:
    """Run the classifier; returns (probabilities, cache-or-None).

    `mode="eval"` is pure: no dropout, no RNG draws, batch norm uses the
    running statistics. `mode="train"` draws fresh dropout masks unless a
    recorded `masks` bundle is supplied, and updates running statistics.
    """
    if mode not in ("train", "eval"):
        raise InvalidParam(f"mode must be 'train' or 'eval', got {mode!r}")
    if x.shape[1] != params.w1.shape[0]:
        raise ShapeError(
            f"input width {x.shape[1]} != first layer fan-in {params.w1.shape[0]}")
    if use_bn and params.bn is None:
        raise InvalidParam("use_bn requires batch-norm parameters")
    train = mode == "train"

    input_mask = hidden_mask = None
    if train and dropout_input > 0.0:
        input_mask = masks.input_mask if masks is not None else rng.bernoulli(
            1.0 - dropout_input, x.shape)
        x_in = x * input_mask
        x_in *= 1.0 / (1.0 - dropout_input)
    else:
        x_in = x

    z1 = x_in @ params.w1 + params.b1

    x_hat = inv_std = None
    if use_bn:
        bn = params.bn
        if train:
            mean = z1.mean(axis=0)
            var = z1.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + _BN_EPS)
            x_hat = (z1 - mean) * inv_std
            bn.running_mean *= _BN_MOMENTUM
            bn.running_mean += (1.0 - _BN_MOMENTUM) * mean
            bn.running_var *= _BN_MOMENTUM
            bn.running_var += (1.0 - _BN_MOMENTUM) * var
        else:
            x_hat = (z1 - bn.running_mean) / np.sqrt(bn.running_var + _BN_EPS)
        relu_in = bn.gamma * x_hat + bn.beta
    else:
        relu_in = z1

    a1 = relu_in * (relu_in > 0)

    if train and dropout_hidden > 0.0:
        hidden_mask = masks.hidden_mask if masks is not None else rng.bernoulli(
            1.0 - dropout_hidden, a1.shape)
        h_drop = a1 * (hidden_mask / (1.0 - dropout_hidden))
    else:
        h_drop = a1

    logits = h_drop @ params.w2 + params.b2
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite activations in forward pass")
    probs = softmax(logits)

    if not train:
        return probs, None
    cache = ForwardCache(
        params=params, x_in=x_in, relu_in=relu_in, h_drop=h_drop, probs=probs,
        masks=DropoutMasks(input_mask, hidden_mask),
        dropout_input=dropout_input, dropout_hidden=dropout_hidden,
        use_bn=use_bn, bn_x_hat=x_hat, bn_inv_std=inv_std,
    )
    return probs, cache


def backward(cache: ForwardCache, dlogits: DenseMatrix, params: ModelParams) -> ParamGrads:
    """Exact gradients of the scalar loss given d(loss)/d(logits)."""
    if cache.params is not params:
        raise StateError("cache was produced by a different parameter set")
    dw2 = cache.h_drop.T @ dlogits
    db2 = dlogits.sum(axis=0)
    dh = dlogits @ params.w2.T

    if cache.masks.hidden_mask is not None:
        da1 = dh * (cache.masks.hidden_mask / (1.0 - cache.dropout_hidden))
    else:
        da1 = dh
    dz = da1 * (cache.relu_in > 0)

    dgamma = dbeta = None
    if cache.use_bn:
        x_hat, inv_std = cache.bn_x_hat, cache.bn_inv_std
        dgamma = (dz * x_hat).sum(axis=0)
        dbeta = dz.sum(axis=0)
        dxhat = dz * params.bn.gamma
        n = dz.shape[0]
        dz = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - x_hat * (dxhat * x_hat).sum(axis=0))

    dw1 = cache.x_in.T @ dz
    db1 = dz.sum(axis=0)
    return ParamGrads(dw1, db1, dw2, db2, dgamma, dbeta)


def adam_step(params: ModelParams, grads: ParamGrads, state: AdamState,
              lr: float, weight_decay: float = 0.0) -> None:
    """In-place Adam update with bias correction.

    L2 decay is added to the gradient of the weight matrices only, never
    to biases or batch-norm scale/shift.
    """
    state.t += 1
    named_params = dict(params.trainable())
    for name, g in grads.named().items():
        p = named_params[name]
        if weight_decay and name in ("w1", "w2"):
            g = g + weight_decay * p
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        m_hat = m / (1.0 - state.beta1 ** state.t)
        v_hat = v / (1.0 - state.beta2 ** state.t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def save_params(params: ModelParams, path) -> None:
    """JSON checkpoint; float repr round-trips every value exactly."""
    tensors = {name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
               for name, arr in params.trainable()}
    if params.bn is not None:
        for name, arr in (("running_mean", params.bn.running_mean),
                          ("running_var", params.bn.running_var)):
            tensors[name] = {"shape": list(arr.shape), "data": arr.ravel().tolist()}
    doc = {"format_version": 1, "use_bn": params.bn is not None, "tensors": tensors}
    with open(path, "w") as f:
        json.dump(doc, f)


def load_params(path) -> ModelParams:
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as e:
        raise IoError(str(e)) from e
    if doc.get("format_version") != 1:
        raise InvalidParam(f"unsupported checkpoint version {doc.get('format_version')}")

    def tensor(name):
        t = doc["tensors"][name]
        return np.asarray(t["data"], dtype=np.float64).reshape(t["shape"])

    bn = None
    if doc["use_bn"]:
        bn = BatchNormState(tensor("gamma"), tensor("beta"),
                            tensor("running_mean"), tensor("running_var"))
    return ModelParams(tensor("w1"), tensor("b1"), tensor("w2"), tensor("b2"), bn)
