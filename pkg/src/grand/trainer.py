"""Training loop: S augmentations per epoch, combined loss, Adam, early stop.

Each epoch draws S independent augmentations (substreams keyed by seed,
epoch, and augmentation index), runs a training forward per augmentation,
and applies one Adam step on the accumulated gradient of
cross-entropy + weight * consistency. Validation loss on the deterministic
inference path drives early stopping; the returned parameters are the
snapshot from the best-validation-loss epoch.
"""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .augmentation import PerturbKind, PerturbMethod, augment
from .errors import InvalidParam, NumericalError
from .losses import (average_predictions, consistency_loss, fused_softmax_ce_grad,
                     probs_grad_to_logits_grad, sharpen, supervised_loss, total_loss)
from .mlp import AdamState, ModelParams, adam_step, backward, forward, glorot_init
from .rng import Rng
from .sparse import CsrMatrix, DenseMatrix, mixed_order_propagate, sym_normalize

# Substream tags so init and per-epoch draws never collide.
_INIT_KEY = 0
_EPOCH_KEY = 1


@dataclass
class Hyperparams:
    prop_steps: int = 8                 # K: propagation depth
    n_augment: int = 4                  # S: augmentations per epoch
    drop_rate: float = 0.5              # delta for the perturbation method
    perturb: PerturbKind = PerturbKind.DROP_NODE
    temperature: float = 0.5            # sharpening T
    consistency_weight: float = 1.0     # lambda
    lr: float = 0.01
    weight_decay: float = 5e-4
    hidden: int = 32
    dropout_input: float = 0.5
    dropout_hidden: float = 0.5
    use_bn: bool = False
    patience: int = 200
    max_epochs: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.prop_steps < 0:
            raise InvalidParam("prop_steps must be >= 0")
        if self.n_augment < 1:
            raise InvalidParam("n_augment must be >= 1")
        if not 0.0 <= self.drop_rate < 1.0:
            raise InvalidParam("drop_rate must be in [0, 1)")
        if not 0.0 < self.temperature <= 1.0:
            raise InvalidParam("temperature must be in (0, 1]")
        if self.consistency_weight < 0:
            raise InvalidParam("consistency_weight must be >= 0")
        if self.patience < 1:
            raise InvalidParam("patience must be >= 1")
        if self.max_epochs < 0:
            raise InvalidParam("max_epochs must be >= 0")
        if isinstance(self.perturb, str):
            self.perturb = PerturbKind(self.perturb)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["perturb"] = self.perturb.value
        return d


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float   # deterministic cross-entropy on the train mask
    sup_loss: float     # stochastic objective: supervised component
    con_loss: float     # stochastic objective: consistency component
    val_loss: float
    val_acc: float
    wall_time: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "train_loss", "sup_loss", "con_loss",
                             "val_loss", "val_acc", "wall_time"])
            for r in self.records:
                writer.writerow([r.epoch, repr(r.train_loss), repr(r.sup_loss),
                                 repr(r.con_loss), repr(r.val_loss),
                                 repr(r.val_acc), repr(r.wall_time)])

    def loss_tuples(self) -> list[tuple]:
        """Deterministic fields only (wall_time excluded)."""
        return [(r.epoch, r.train_loss, r.sup_loss, r.con_loss, r.val_loss, r.val_acc)
                for r in self.records]


def onehot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Rows with label -1 (unknown) stay all-zero."""
    out = np.zeros((len(labels), n_classes))
    known = labels >= 0
    out[np.nonzero(known)[0], labels[known]] = 1.0
    return out


def cross_entropy(probs: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    p = np.maximum(probs[mask, labels[mask]], 1e-12)
    return float(-np.log(p).mean())


def train_epoch(params: ModelParams, adam: AdamState, a_hat: CsrMatrix,
                x: DenseMatrix, y_onehot: np.ndarray, train_idx: np.ndarray,
                hp: Hyperparams, master_rng: Rng, epoch: int,
                ) -> tuple[float, float]:
    """One optimization step over S fresh augmentations.

    Returns (sup_loss, con_loss) of the stochastic objective. Raises
    NumericalError if the combined loss is non-finite.
    """
    method = PerturbMethod(hp.perturb, hp.drop_rate)
    preds, caches = [], []
    for s in range(hp.n_augment):
        rng_s = master_rng.child(_EPOCH_KEY, epoch, s)
        x_bar = augment(a_hat, x, method, hp.prop_steps, rng_s)
        probs, cache = forward(x_bar, params, "train", hp.dropout_input,
                               hp.dropout_hidden, hp.use_bn, rng_s)
        preds.append(probs)
        caches.append(cache)

    sup_value, _ = supervised_loss(preds, y_onehot, train_idx)
    center = sharpen(average_predictions(preds), hp.temperature)
    con_value, con_grads = consistency_loss(preds, center)
    combined = total_loss(sup_value, con_value, hp.consistency_weight)
    if not np.isfinite(combined):
        raise NumericalError(
            f"non-finite loss at epoch {epoch}: sup={sup_value}, con={con_value}")

    grad_total = None
    for probs, cache, dcon in zip(preds, caches, con_grads):
        dlogits = fused_softmax_ce_grad(probs, y_onehot, train_idx, hp.n_augment)
        if hp.consistency_weight > 0:
            dlogits += probs_grad_to_logits_grad(probs, hp.consistency_weight * dcon)
        g = backward(cache, dlogits, params)
        if grad_total is None:
            grad_total = g
        else:
            grad_total.add_(g)
    adam_step(params, grad_total, adam, hp.lr, hp.weight_decay)
    return sup_value, con_value


def predict(params: ModelParams, a_hat: CsrMatrix, x: DenseMatrix, k: int) -> np.ndarray:
    """Deterministic inference: propagate unperturbed features, eval forward."""
    x_bar = mixed_order_propagate(a_hat, x, k)
    probs, _ = forward(x_bar, params, "eval", 0.0, 0.0, params.bn is not None)
    return probs


def evaluate(preds: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Accuracy on the masked nodes; argmax ties go to the lowest class."""
    if len(mask) == 0:
        raise InvalidParam("evaluation mask is empty")
    return float((np.argmax(preds[mask], axis=1) == labels[mask]).mean())


def fit(dataset, hp: Hyperparams, a_hat: CsrMatrix | None = None,
        ) -> tuple[ModelParams, TrainLog]:
    """Train with early stopping on validation loss.

    Stops once validation loss has not improved for `patience` consecutive
    epochs (or at max_epochs) and returns the parameter snapshot from the
    best-validation-loss epoch. Gradients never see the val/test masks.
    """
    train_idx, val_idx = dataset.masks["train"], dataset.masks["val"]
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise InvalidParam("train and val masks must be nonempty")
    if a_hat is None:
        a_hat = sym_normalize(dataset.adjacency)
    x = dataset.features
    y1h = onehot(dataset.labels, dataset.meta["C"])

    master = Rng(hp.seed)
    params = glorot_init(x.shape[1], hp.hidden, dataset.meta["C"],
                         master.child(_INIT_KEY), hp.use_bn)
    adam = AdamState.for_params(params)

    # Inference always propagates the unperturbed features, so the eval
    # input is fixed for the whole run; computing it once saves a full
    # propagation per epoch.
    x_bar_eval = mixed_order_propagate(a_hat, x, hp.prop_steps)

    log = TrainLog()
    best_params = params.copy()
    epochs_since_best = 0
    for epoch in range(1, hp.max_epochs + 1):
        t0 = time.perf_counter()
        sup_value, con_value = train_epoch(params, adam, a_hat, x, y1h,
                                           train_idx, hp, master, epoch)
        probs, _ = forward(x_bar_eval, params, "eval", 0.0, 0.0, hp.use_bn)
        train_ce = cross_entropy(probs, dataset.labels, train_idx)
        val_ce = cross_entropy(probs, dataset.labels, val_idx)
        val_acc = evaluate(probs, dataset.labels, val_idx)
        log.records.append(EpochRecord(
            epoch=epoch, train_loss=train_ce, sup_loss=sup_value,
            con_loss=con_value, val_loss=val_ce, val_acc=val_acc,
            wall_time=time.perf_counter() - t0))

        if val_ce < log.best_val_loss:
            log.best_val_loss = val_ce
            log.best_epoch = epoch
            best_params = params.copy()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= hp.patience:
                break
    return best_params, log


def run_summary(log: TrainLog, test_acc: float, hp: Hyperparams,
                wall_time_total: float) -> dict:
    return {
        "best_epoch": log.best_epoch,
        "best_val_loss": log.best_val_loss,
        "test_acc": test_acc,
        "hyperparams": hp.to_dict(),
        "seed": hp.seed,
        "epochs_run": len(log.records),
        "wall_time_total": wall_time_total,
    }
