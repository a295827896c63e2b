"""Randomized classification trees with sparsity-inducing concave regularizers.

Training minimizes the expected misclassification cost of a soft oblique tree
with projected gradients; node-based decomposition, cross-validation harnesses
and VC-dimension bounds are included.
"""

__version__ = "0.1.0"

from .core import (
    LogisticCdf,
    TreeParams,
    TreeTopology,
    best_leaf_labels,
    branch_prob,
    class_posterior,
    leaf_path_probs,
    load_model,
    predict,
    save_model,
)
from .data import Dataset, RawTable, Transform, encode_and_scale, kfold_split, load_csv, synthetic_oblique
from .decomp import DecompConfig, WorkingSet, c_nb_dec, s_nb_dec
from .errors import ConfigError, DataError, InfeasibleError, NumericalError, RCTError, StructuralError
from .objective import PenaltySpec, Problem, RegularizerSpec, default_costs, sparsity_indices
from .solver import SolverConfig, multistart_train, random_start, train
from .vc import VcQuery, shatter_construction, vc_lower, vc_upper_witness, verify_separation

__all__ = [
    "LogisticCdf",
    "TreeParams",
    "TreeTopology",
    "best_leaf_labels",
    "branch_prob",
    "class_posterior",
    "leaf_path_probs",
    "load_model",
    "predict",
    "save_model",
    "Dataset",
    "RawTable",
    "Transform",
    "encode_and_scale",
    "kfold_split",
    "load_csv",
    "synthetic_oblique",
    "DecompConfig",
    "WorkingSet",
    "c_nb_dec",
    "s_nb_dec",
    "ConfigError",
    "DataError",
    "InfeasibleError",
    "NumericalError",
    "RCTError",
    "StructuralError",
    "PenaltySpec",
    "Problem",
    "RegularizerSpec",
    "default_costs",
    "sparsity_indices",
    "SolverConfig",
    "multistart_train",
    "random_start",
    "train",
    "VcQuery",
    "shatter_construction",
    "vc_lower",
    "vc_upper_witness",
    "verify_separation",
]
