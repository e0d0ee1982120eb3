"""Personalized federated dictionary learning (PFedDL).

Per-site sparse dictionary learning, one-time signed-permutation alignment
of the site dictionaries, and federated averaging of the global atoms with
a per-site supervised classifier on the sparse codes.
"""

from .alignment import AlignmentRecord, SignedPermutation, apply_signed_permutation, global_alignment
from .dataio import SyntheticSpec, generate_synthetic_federation, pearson_fisher_features
from .dl_core import ClassifierWeights, Hyperparams, pretrain_local
from .errors import ConfigurationError, PFedDLError, ShapeError
from .evaluation import ExperimentConfig, run_experiment
from .federation import ClientState, Server, run_pfeddl

__version__ = "0.1.0"

__all__ = [
    "AlignmentRecord",
    "ClassifierWeights",
    "ClientState",
    "ConfigurationError",
    "ExperimentConfig",
    "Hyperparams",
    "PFedDLError",
    "Server",
    "ShapeError",
    "SignedPermutation",
    "SyntheticSpec",
    "apply_signed_permutation",
    "generate_synthetic_federation",
    "global_alignment",
    "pearson_fisher_features",
    "pretrain_local",
    "run_experiment",
    "run_pfeddl",
]
