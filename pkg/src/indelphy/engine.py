"""Random-scan Metropolis-within-Gibbs driver over (tree, history, params).

The chain state caches the induced alignment, per-column substitution terms,
per-edge indel log-densities, and the log prior; kernels invalidate only what
they touch.  An optional audit recomputes everything from scratch and checks
agreement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .hky import SubstParams, column_log_likelihoods
from .indel import IndelParams, edge_history_log_density, equilibrium_length_log_pmf
from .priors import log_prior, sample_prior
from .proposals import (
    ProposalOutcome,
    edge_history_proposal_log_density,
    propose_branch_length,
    propose_edge_history,
    propose_node_update,
    propose_parameters,
    propose_spr,
)
from .types import (
    GAP,
    Sequence,
    Tree,
    TreeHistory,
    leaf_columns,
    node_lengths,
)

NEG_INF = float("-inf")

CATEGORIES = ("branch", "edge", "node", "spr", "params")
PARAM_BLOCKS = ("pi", "kappa", "gamma", "r", "r_d", "lambda")


@dataclass(frozen=True)
class ChainState:
    tree: Tree
    history: TreeHistory
    subst: SubstParams
    indel: IndelParams
    gamma: float
    cols: np.ndarray | None          # (n_taxa, n_columns) base indices, GAP for gaps
    col_loglikes: np.ndarray | None
    log_like: float
    edge_logdens: tuple[float, ...]
    log_root_q: float
    log_prior: float

    @property
    def log_posterior(self) -> float:
        return self.log_like + self.log_root_q + sum(self.edge_logdens) + self.log_prior


def _columns_array(tree: Tree, history: TreeHistory, data_indices) -> np.ndarray:
    cols = leaf_columns(history, tree)
    n = tree.n_taxa
    out = np.full((n, len(cols)), GAP, dtype=np.int64)
    for c, col in enumerate(cols):
        for k in range(n):
            b = col[k]
            if b != GAP:
                out[k, c] = data_indices[k][b]
    return out


@dataclass
class Dataset:
    """Observed sequences keyed to a fixed sorted taxon order."""

    sequences: list[Sequence]

    def __post_init__(self):
        self.sequences = sorted(self.sequences, key=lambda s: s.name)
        names = [s.name for s in self.sequences]
        if len(set(names)) != len(names):
            raise ValueError("duplicate taxon names")
        self.taxa = tuple(names)
        self.indices = [np.array(s.base_indices, dtype=np.int64) for s in self.sequences]
        self.lengths = {s.name: len(s) for s in self.sequences}


def make_state(
    data: Dataset,
    tree: Tree,
    history: TreeHistory,
    subst: SubstParams,
    indel: IndelParams,
    gamma: float,
    cfg: RunConfig,
    *,
    prev: ChainState | None = None,
    alignment_changed: bool = True,
    likelihood_changed: bool = True,
    indel_changed: bool = True,
) -> ChainState:
    """Assemble a state, recomputing only the invalidated cache entries."""
    if cfg.prior_only:
        cols = None
        col_ll = None
        like = 0.0
    elif prev is not None and not alignment_changed and not likelihood_changed:
        cols, col_ll, like = prev.cols, prev.col_loglikes, prev.log_like
    else:
        if prev is not None and not alignment_changed:
            cols = prev.cols
        else:
            cols = _columns_array(tree, history, data.indices)
        if cols.shape[1] == 0:
            col_ll = np.zeros(0)
        else:
            col_ll = column_log_likelihoods(cols, tree, subst)
        like = float(col_ll.sum())
    if prev is not None and not indel_changed:
        edge_logdens = prev.edge_logdens
        log_root_q = prev.log_root_q
    else:
        edge_logdens = tuple(
            edge_history_log_density(h, indel) for h in history.edge_histories
        )
        log_root_q = equilibrium_length_log_pmf(history.root_length, indel.r)
    lp = log_prior(tree, gamma, subst, indel, cfg.prior)
    return ChainState(
        tree, history, subst, indel, gamma,
        cols, col_ll, like, edge_logdens, log_root_q, lp,
    )


def full_state(data, tree, history, subst, indel, gamma, cfg) -> ChainState:
    """Everything recomputed from scratch (used at init and by the audit)."""
    return make_state(data, tree, history, subst, indel, gamma, cfg)


def initial_state(data: Dataset, cfg: RunConfig, rng) -> ChainState:
    """Alignment-free start: prior draws for the tree and parameters, all
    internal node lengths pinned to the median input length, and guided
    histories bridging to the observed leaf lengths."""
    draw = sample_prior(rng, cfg.prior, data.taxa)
    tree = draw.tree
    center = int(np.median([len(s) for s in data.sequences]))
    lengths_at = [0] * tree.n_nodes
    for k, name in enumerate(tree.taxa):
        lengths_at[k] = data.lengths[name]
    for node in range(tree.n_taxa, tree.n_nodes):
        lengths_at[node] = center
    hs = [None] * len(tree.edges)
    for eidx in tree.preorder_edges:
        parent, child = tree.edges[eidx]
        h, _ = propose_edge_history(
            lengths_at[parent], lengths_at[child], tree.lengths[eidx],
            draw.indel, cfg.tuning, rng, guided=True,
        )
        hs[eidx] = h
    history = TreeHistory(lengths_at[tree.history_root], tuple(hs))
    return full_state(data, tree, history, draw.subst, draw.indel, draw.gamma, cfg)


def acceptance_log_ratio(state: ChainState, cand: ChainState, outcome: ProposalOutcome) -> float:
    return (
        cand.log_posterior - state.log_posterior
        + outcome.log_reverse - outcome.log_forward
        + outcome.log_jacobian
    )


@dataclass
class MoveStats:
    proposed: dict
    accepted: dict

    @classmethod
    def empty(cls):
        return cls({c: 0 for c in CATEGORIES}, {c: 0 for c in CATEGORIES})

    def rate(self, category: str) -> float:
        p = self.proposed[category]
        return self.accepted[category] / p if p else float("nan")


def _category_weights(cfg: RunConfig, n_taxa: int) -> np.ndarray:
    w = np.array(cfg.scan_weights, dtype=float)
    if n_taxa < 4:
        w[CATEGORIES.index("spr")] = 0.0
    return w / w.sum()


def mcmc_step(
    state: ChainState, data: Dataset, cfg: RunConfig, rng, stats: MoveStats | None = None
) -> ChainState:
    """One random-scan step: pick a category, propose, accept or reject."""
    weights = _category_weights(cfg, state.tree.n_taxa)
    cat = CATEGORIES[int(rng.choice(len(CATEGORIES), p=weights))]
    tree, history = state.tree, state.history
    tuning = cfg.tuning

    if cat == "branch":
        eidx = int(rng.integers(len(tree.edges)))
        outcome = propose_branch_length(eidx, tree, history, tuning, rng)
        cand = make_state(
            data, outcome.tree, outcome.history, state.subst, state.indel,
            state.gamma, cfg, prev=state,
            alignment_changed=False, likelihood_changed=True, indel_changed=True,
        )
    elif cat == "edge":
        eidx = int(rng.integers(len(tree.edges)))
        guided = rng.random() < tuning.guided_prob
        parent, child = tree.edges[eidx]
        lengths_at = node_lengths(history, tree)
        h_old = history.edge_histories[eidx]
        h_new, log_fwd = propose_edge_history(
            lengths_at[parent], lengths_at[child], tree.lengths[eidx],
            state.indel, tuning, rng, guided,
        )
        log_rev = edge_history_proposal_log_density(h_old, state.indel, tuning, guided)
        hs = list(history.edge_histories)
        hs[eidx] = h_new
        outcome = ProposalOutcome(
            log_fwd, log_rev,
            history=TreeHistory(history.root_length, tuple(hs)),
            alignment_changed=True,
        )
        cand = make_state(
            data, tree, outcome.history, state.subst, state.indel, state.gamma,
            cfg, prev=state,
            alignment_changed=True, likelihood_changed=True, indel_changed=True,
        )
    elif cat == "node":
        node = tree.n_taxa + int(rng.integers(tree.n_nodes - tree.n_taxa))
        outcome = propose_node_update(node, tree, history, state.indel, tuning, rng)
        cand = make_state(
            data, outcome.tree, outcome.history, state.subst, state.indel,
            state.gamma, cfg, prev=state,
            alignment_changed=True, likelihood_changed=True, indel_changed=True,
        )
    elif cat == "spr":
        outcome = propose_spr(tree, history, state.indel, tuning, rng)
        cand = make_state(
            data, outcome.tree, outcome.history, state.subst, state.indel,
            state.gamma, cfg, prev=state,
            alignment_changed=True, likelihood_changed=True, indel_changed=True,
        )
    else:
        blocks = [
            b for b in PARAM_BLOCKS
            if b != "r_d" or hasattr(state.indel.deletion_sizes, "r_d")
        ]
        block = blocks[int(rng.integers(len(blocks)))]
        outcome = propose_parameters(
            block, state.subst, state.indel, state.gamma, tuning, rng
        )
        if outcome is None:
            if stats is not None:
                stats.proposed[cat] += 1
            return state
        subst = outcome.subst if outcome.subst is not None else state.subst
        indel = outcome.indel if outcome.indel is not None else state.indel
        gamma = outcome.gamma if outcome.gamma is not None else state.gamma
        cand = make_state(
            data, tree, history, subst, indel, gamma, cfg, prev=state,
            alignment_changed=False,
            likelihood_changed=outcome.subst is not None,
            indel_changed=outcome.indel is not None,
        )

    if stats is not None:
        stats.proposed[cat] += 1
    log_ratio = acceptance_log_ratio(state, cand, outcome)
    if math.isnan(log_ratio):
        return state
    if log_ratio >= 0 or rng.random() < math.exp(log_ratio):
        if stats is not None:
            stats.accepted[cat] += 1
        return cand
    return state


@dataclass(frozen=True)
class ChainSample:
    iteration: int
    log_posterior: float
    tree: Tree
    history: TreeHistory
    subst: SubstParams
    indel: IndelParams
    gamma: float


@dataclass
class ChainResult:
    samples: list[ChainSample]
    stats: MoveStats
    final_state: ChainState


def run_chain(
    data: Dataset,
    cfg: RunConfig,
    rng,
    *,
    on_sample=None,
) -> ChainResult:
    """Run one chain for cfg.iters steps, emitting every cfg.thin-th state."""
    state = initial_state(data, cfg, rng)
    stats = MoveStats.empty()
    samples: list[ChainSample] = []
    for it in range(1, cfg.iters + 1):
        state = mcmc_step(state, data, cfg, rng, stats)
        if cfg.audit_every and it % cfg.audit_every == 0:
            audit_state(state, data, cfg)
        if it % cfg.thin == 0:
            sample = ChainSample(
                it, state.log_posterior, state.tree, state.history,
                state.subst, state.indel, state.gamma,
            )
            samples.append(sample)
            if on_sample is not None:
                on_sample(sample)
    return ChainResult(samples, stats, state)


def audit_state(state: ChainState, data: Dataset, cfg: RunConfig, tol: float = 1e-8):
    """Assert cached log-terms agree with a from-scratch recomputation."""
    fresh = full_state(
        data, state.tree, state.history, state.subst, state.indel, state.gamma, cfg
    )
    delta = abs(fresh.log_posterior - state.log_posterior)
    if not delta < tol:
        raise AssertionError(f"cache drift: {delta} log units")
    return delta
