"""Joint Bayesian inference of multiple sequence alignment and phylogeny from
unaligned DNA, by MCMC over trees and complete insertion/deletion histories."""

from .config import RunConfig, parse_config
from .engine import Dataset, run_chain
from .hky import SubstParams, alignment_log_likelihood, transition_probabilities
from .indel import (
    GeometricSizes,
    IndelParams,
    NegativeBinomialSizes,
    PowerLawSizes,
    edge_history_log_density,
    equilibrium_length_log_pmf,
    rate_ratio,
    tree_history_log_density,
)
from .priors import PriorConfig, log_prior, sample_prior
from .simulate import simulate_dataset, simulate_edge_history
from .types import (
    Alignment,
    EdgeHistory,
    IndelEvent,
    Sequence,
    Tree,
    TreeHistory,
    project_alignment,
    reverse_edge_history,
    validate_edge_history,
)

__version__ = "0.1.0"

__all__ = [
    "Alignment",
    "Dataset",
    "EdgeHistory",
    "GeometricSizes",
    "IndelEvent",
    "IndelParams",
    "NegativeBinomialSizes",
    "PowerLawSizes",
    "PriorConfig",
    "RunConfig",
    "Sequence",
    "SubstParams",
    "Tree",
    "TreeHistory",
    "alignment_log_likelihood",
    "edge_history_log_density",
    "equilibrium_length_log_pmf",
    "log_prior",
    "parse_config",
    "project_alignment",
    "rate_ratio",
    "reverse_edge_history",
    "run_chain",
    "sample_prior",
    "simulate_dataset",
    "simulate_edge_history",
    "transition_probabilities",
    "tree_history_log_density",
    "validate_edge_history",
]
