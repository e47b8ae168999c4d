"""Semi-supervised node classification on sparse graphs.

Random feature propagation generates cheap stochastic augmentations of
the node features; a small MLP classifies each augmentation, and a
consistency penalty pulls the per-augmentation predictions toward a
sharpened consensus. Includes a robustness/over-smoothing evaluation
harness and a numerical verifier for the closed-form regularizers.
"""

__version__ = "0.1.0"

from .augmentation import PerturbKind, PerturbMethod, augment, drop_edge, drop_node, dropout_features
from .datasets import Dataset, load_canonical, row_normalize, save_canonical, synthetic_sbm
from .rng import Rng
from .sparse import (CsrMatrix, build_adjacency, densify, mixed_order_propagate,
                     spmm, sym_normalize)
from .trainer import Hyperparams, TrainLog, evaluate, fit, predict

__all__ = [
    "CsrMatrix", "Dataset", "Hyperparams", "PerturbKind", "PerturbMethod",
    "Rng", "TrainLog", "augment", "build_adjacency", "densify", "drop_edge",
    "drop_node", "dropout_features", "evaluate", "fit", "load_canonical",
    "mixed_order_propagate", "predict", "row_normalize", "save_canonical",
    "spmm", "sym_normalize", "synthetic_sbm",
]
