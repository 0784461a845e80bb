"""HKY85 substitution model: rate matrix, transition probabilities, and
alignment log-likelihood by pruning with gap cells treated as missing data.

The generator is normalized to one expected substitution per site per unit
branch length.  Transition probabilities come from a cached symmetric
eigendecomposition, so P(t) costs a couple of small matrix products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .types import GAP, Alignment, Tree

TRANSITIONS = ((0, 2), (2, 0), (1, 3), (3, 1))  # A<->G, C<->T


@dataclass(frozen=True)
class SubstParams:
    """Transition/transversion ratio kappa and stationary frequencies pi."""

    kappa: float
    pi: tuple[float, float, float, float]

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if len(self.pi) != 4 or any(p <= 0 for p in self.pi):
            raise ValueError("pi must be four positive frequencies")
        if abs(sum(self.pi) - 1.0) > 1e-12:
            raise ValueError("pi must sum to 1")

    @cached_property
    def model(self) -> "HKYModel":
        return HKYModel(self)


class HKYModel:
    """Normalized HKY generator with a cached eigendecomposition."""

    def __init__(self, params: SubstParams):
        self.params = params
        pi = np.asarray(params.pi, dtype=float)
        q = np.tile(pi, (4, 1))
        for a, b in TRANSITIONS:
            q[a, b] *= params.kappa
        np.fill_diagonal(q, 0.0)
        np.fill_diagonal(q, -q.sum(axis=1))
        scale = -float(np.dot(pi, np.diag(q)))
        q /= scale
        self.pi = pi
        self.Q = q
        # reversible, so D^1/2 Q D^-1/2 is symmetric; eigh is exact and stable
        d = np.sqrt(pi)
        sym = q * d[:, None] / d[None, :]
        w, vec = np.linalg.eigh(sym)
        self._eigval = w
        self._left = vec / d[:, None]
        self._right = vec.T * d[None, :]

    def transition_probabilities(self, t: float) -> np.ndarray:
        """P(t) = exp(Q t); rows sum to 1."""
        if t < 0:
            raise ValueError("branch length must be nonnegative")
        p = (self._left * np.exp(self._eigval * t)) @ self._right
        np.maximum(p, 0.0, out=p)
        return p


def transition_probabilities(params: SubstParams, t: float) -> np.ndarray:
    return params.model.transition_probabilities(t)


def column_log_likelihoods(
    cols: np.ndarray, tree: Tree, params: SubstParams
) -> np.ndarray:
    """Per-column log-likelihoods by pruning.

    cols has shape (n_taxa, n_columns) with base indices 0..3 and GAP for
    missing cells.  Gap cells contribute an all-ones partial vector.  The
    root distribution is pi; reversibility makes the rooting irrelevant.
    """
    model = params.model
    n_cols = cols.shape[1]
    eye = np.eye(4)
    partials: list[np.ndarray | None] = [None] * tree.n_nodes
    for k in range(tree.n_taxa):
        part = np.ones((n_cols, 4))
        idx = cols[k] != GAP
        part[idx] = eye[cols[k, idx]]
        partials[k] = part
    for eidx in reversed(tree.preorder_edges):
        parent, child = tree.edges[eidx]
        p = model.transition_probabilities(tree.lengths[eidx])
        msg = partials[child] @ p.T
        if partials[parent] is None:
            partials[parent] = msg
        else:
            partials[parent] = partials[parent] * msg
    root = partials[tree.history_root]
    likes = root @ model.pi
    return np.log(likes)


def alignment_cols_array(alignment: Alignment) -> np.ndarray:
    """(n_taxa, n_columns) array of base indices with GAP for gaps."""
    from .types import BASE_INDEX

    n_taxa = len(alignment.taxa)
    cols = np.full((n_taxa, alignment.n_columns), GAP, dtype=np.int64)
    for c, col in enumerate(alignment.columns):
        for k, b in enumerate(col):
            if b != GAP:
                cols[k, c] = BASE_INDEX[alignment.sequences[k][b]]
    return cols


def alignment_log_likelihood(
    alignment: Alignment, tree: Tree, params: SubstParams
) -> float:
    """Total log-likelihood of the aligned sequences under HKY."""
    if alignment.taxa != tree.taxa:
        raise ValueError("alignment taxa do not match tree taxa")
    if alignment.n_columns == 0:
        return 0.0
    cols = alignment_cols_array(alignment)
    if np.any((cols == GAP).all(axis=0)):
        raise ValueError("all-gap column")
    return float(column_log_likelihoods(cols, tree, params).sum())


def jukes_cantor_probability(same: bool, t: float) -> float:
    """Closed-form JC transition probability under unit-rate normalization
    (kappa = 1, uniform pi); used as an independent check."""
    e = math.exp(-4.0 * t / 3.0)
    return 0.25 + 0.75 * e if same else 0.25 - 0.25 * e
