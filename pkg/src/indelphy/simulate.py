"""Forward simulation of the full generative model.

Parameters and tree come from the priors, the root sequence from the
equilibrium length law and stationary base frequencies, indel histories from
exact pure-jump simulation, and substitutions from exact per-residue
transition sampling on each inter-event segment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hky import SubstParams
from .indel import IndelParams, equilibrium_length_log_pmf
from .priors import PriorConfig, sample_prior
from .types import (
    DELETION,
    DNA_BASES,
    INSERTION,
    Alignment,
    EdgeHistory,
    IndelEvent,
    Sequence,
    Tree,
    TreeHistory,
    project_alignment,
)


def sample_equilibrium_length(r: float, rng) -> int:
    """Draw from q(x) = r (1-r)^x on {0, 1, ...}."""
    return int(rng.geometric(r)) - 1


def simulate_edge_history(n0: int, v: float, params: IndelParams, rng) -> EdgeHistory:
    """Exact simulation of the unconditioned indel jump process on one edge.

    Waiting times are exponential with the current total intensity; the event
    is an insertion with probability (n+1) lambda / eta, else a deletion with
    joint (position, size) law d(l)/f(n).
    """
    events = []
    n = n0
    t = 0.0
    while True:
        eta = params.eta(n)
        t = t + rng.exponential(1.0 / eta)
        if t >= v:
            break
        if rng.random() < (n + 1) * params.lam / eta:
            pos = int(rng.integers(n + 1))
            size = params.sample_insertion_size(rng)
            n += size
            events.append(IndelEvent(t, INSERTION, pos, size, n))
        else:
            pos, size = params.sample_deletion(n, rng)
            n -= size
            events.append(IndelEvent(t, DELETION, pos, size, n))
    return EdgeHistory(tuple(events), n0, n, v)


def _evolve_bases(bases: np.ndarray, dt: float, subst: SubstParams, rng) -> np.ndarray:
    if len(bases) == 0 or dt == 0.0:
        return bases
    cum = np.cumsum(subst.model.transition_probabilities(dt), axis=1)
    u = rng.random(len(bases))
    return (cum[bases] < u[:, None]).sum(axis=1).astype(np.int64)


def _sample_stationary(k: int, subst: SubstParams, rng) -> np.ndarray:
    cum = np.cumsum(subst.pi)
    return np.searchsorted(cum, rng.random(k)).astype(np.int64)


def evolve_edge_sequence(
    bases: np.ndarray, history: EdgeHistory, subst: SubstParams, rng
) -> np.ndarray:
    """Propagate bases down one edge: HKY evolution on each inter-event
    segment, stationary draws for inserted residues, removal for deletions."""
    t_prev = 0.0
    cur = bases
    for e in history.events:
        cur = _evolve_bases(cur, e.t - t_prev, subst, rng)
        if e.kind == INSERTION:
            fresh = _sample_stationary(e.size, subst, rng)
            cur = np.concatenate([cur[: e.pos], fresh, cur[e.pos :]])
        else:
            cur = np.concatenate([cur[: e.pos], cur[e.pos + e.size :]])
        t_prev = e.t
    return _evolve_bases(cur, history.v - t_prev, subst, rng)


@dataclass(frozen=True)
class SimulatedDataset:
    sequences: list[Sequence]
    tree: Tree
    history: TreeHistory
    alignment: Alignment
    subst: SubstParams
    indel: IndelParams
    gamma: float


def simulate_dataset(
    n_taxa: int,
    cfg: PriorConfig,
    rng,
    *,
    taxa: tuple[str, ...] | None = None,
    tree: Tree | None = None,
    subst: SubstParams | None = None,
    indel: IndelParams | None = None,
    gamma: float | None = None,
    root_length: int | None = None,
) -> SimulatedDataset:
    """Simulate sequences plus the true tree, history, and alignment.

    Any of the tree and parameter blocks may be pinned; unpinned blocks are
    drawn from the priors.
    """
    if taxa is None:
        width = len(str(max(n_taxa - 1, 1)))
        taxa = tuple(f"t{str(i).zfill(width)}" for i in range(n_taxa))
    draw = sample_prior(rng, cfg, taxa)
    tree = tree if tree is not None else draw.tree
    subst = subst if subst is not None else draw.subst
    indel = indel if indel is not None else draw.indel
    gamma = gamma if gamma is not None else draw.gamma

    if root_length is None:
        root_length = sample_equilibrium_length(indel.r, rng)
    root_bases = _sample_stationary(root_length, subst, rng)

    node_bases: list[np.ndarray | None] = [None] * tree.n_nodes
    node_bases[tree.history_root] = root_bases
    edge_histories: list[EdgeHistory | None] = [None] * len(tree.edges)
    for eidx in tree.preorder_edges:
        parent, child = tree.edges[eidx]
        h = simulate_edge_history(len(node_bases[parent]), tree.lengths[eidx], indel, rng)
        edge_histories[eidx] = h
        node_bases[child] = evolve_edge_sequence(node_bases[parent], h, subst, rng)

    history = TreeHistory(root_length, tuple(edge_histories))
    sequences = [
        Sequence(name, "".join(DNA_BASES[b] for b in node_bases[k]))
        for k, name in enumerate(tree.taxa)
    ]
    alignment = project_alignment(history, tree, sequences)
    return SimulatedDataset(sequences, tree, history, alignment, subst, indel, gamma)


def root_length_log_pmf(x: int, params: IndelParams) -> float:
    return equilibrium_length_log_pmf(x, params.r)
