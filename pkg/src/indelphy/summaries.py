"""Posterior summarization and convergence diagnostics.

Pairwise homology posteriors are tallied from sampled alignments; the point
alignment is built by greedy sequence annealing against an expected-accuracy
gain; split and topology tables, per-split indel statistics, realized
fragment-size posteriors, Gelman-Rubin statistics, and cross-run clade
spreads round out the toolset.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .types import (
    GAP,
    Alignment,
    Tree,
    TreeHistory,
    canonical_split,
    topology_key,
)


# ---------------------------------------------------------------------------
# Pairwise homology posteriors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairPosterior:
    """For taxa (a, b): match[i, j] = P(base i of a shares a column with base
    j of b); gap_a[i] = P(base i of a is unaligned to b); symmetric for b."""

    match: np.ndarray
    gap_a: np.ndarray
    gap_b: np.ndarray


def pair_homology_posteriors(
    alignments: list[Alignment],
) -> dict[tuple[int, int], PairPosterior]:
    """Empirical pair-homology probabilities across sampled alignments."""
    if not alignments:
        raise ValueError("need at least one alignment sample")
    first = alignments[0]
    n_taxa = len(first.taxa)
    lengths = [len(s) for s in first.sequences]
    match: dict[tuple[int, int], np.ndarray] = {}
    gap_a: dict[tuple[int, int], np.ndarray] = {}
    gap_b: dict[tuple[int, int], np.ndarray] = {}
    for a in range(n_taxa):
        for b in range(a + 1, n_taxa):
            match[(a, b)] = np.zeros((lengths[a], lengths[b]))
            gap_a[(a, b)] = np.zeros(lengths[a])
            gap_b[(a, b)] = np.zeros(lengths[b])
    for aln in alignments:
        for col in aln.columns:
            for a in range(n_taxa):
                ia = col[a]
                for b in range(a + 1, n_taxa):
                    ib = col[b]
                    if ia != GAP and ib != GAP:
                        match[(a, b)][ia, ib] += 1
                    elif ia != GAP:
                        gap_a[(a, b)][ia] += 1
                    elif ib != GAP:
                        gap_b[(a, b)][ib] += 1
    m = len(alignments)
    return {
        key: PairPosterior(match[key] / m, gap_a[key] / m, gap_b[key] / m)
        for key in match
    }


# ---------------------------------------------------------------------------
# Sequence annealing
# ---------------------------------------------------------------------------


class _AnnealState:
    """Columns as disjoint sets of (taxon, base) cells with a precedence DAG."""

    def __init__(self, lengths: list[int]):
        self.cells: dict[int, dict[int, int]] = {}
        self.col_of: dict[tuple[int, int], int] = {}
        next_col = 0
        for k, n in enumerate(lengths):
            for b in range(n):
                self.cells[next_col] = {k: b}
                self.col_of[(k, b)] = next_col
                next_col += 1
        self.lengths = lengths

    def successors(self, col: int) -> set[int]:
        out = set()
        for k, b in self.cells[col].items():
            if b + 1 < self.lengths[k]:
                out.add(self.col_of[(k, b + 1)])
        return out

    def reachable(self, src: int, dst: int) -> bool:
        seen = {src}
        stack = [src]
        while stack:
            node = stack.pop()
            if node == dst:
                return True
            for nxt in self.successors(node):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return False

    def merge(self, keep: int, drop: int):
        for k, b in self.cells[drop].items():
            self.cells[keep][k] = b
            self.col_of[(k, b)] = keep
        del self.cells[drop]

    def ordered_columns(self) -> list[dict[int, int]]:
        preds = {c: 0 for c in self.cells}
        succ_map = {c: self.successors(c) for c in self.cells}
        for c, succs in succ_map.items():
            for s in succs:
                preds[s] += 1
        ready = [(min(self.cells[c].items()), c) for c in self.cells if preds[c] == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            _, c = heapq.heappop(ready)
            order.append(c)
            for s in succ_map[c]:
                preds[s] -= 1
                if preds[s] == 0:
                    heapq.heappush(ready, (min(self.cells[s].items()), s))
        return [self.cells[c] for c in order]


def _pair_lookup(posteriors, a, b):
    if a < b:
        pp = posteriors[(a, b)]
        return pp.match, pp.gap_a
    pp = posteriors[(b, a)]
    return pp.match.T, pp.gap_b


def _merge_gain(state, posteriors, ca, cb, gap_factor) -> float:
    gain = 0.0
    for a, ia in state.cells[ca].items():
        for b, ib in state.cells[cb].items():
            match, gap = _pair_lookup(posteriors, a, b)
            match_b, gap_b = _pair_lookup(posteriors, b, a)
            gain += match[ia, ib] - gap_factor * (gap[ia] + gap_b[ib])
    return gain


def annealed_alignment(
    posteriors: dict[tuple[int, int], PairPosterior],
    taxa: tuple[str, ...],
    sequences: tuple[str, ...],
    gap_factor: float = 0.5,
) -> tuple[Alignment, list[tuple[float, ...]]]:
    """Greedy maximal-expected-accuracy alignment by column merging.

    Starting from the null alignment, repeatedly apply the valid merge with
    the largest positive gain, where the gain of joining two columns sums
    P(match) - gap_factor * (P(gap) + P(gap)) over the newly created cell
    pairs.  A merge is valid when the columns share no taxon and the
    precedence DAG stays acyclic.  Returns the alignment and per-column
    per-taxon expected accuracies (gap cells included).
    """
    lengths = [len(s) for s in sequences]
    state = _AnnealState(lengths)

    heap: list[tuple[float, int, int]] = []
    for (a, b), pp in posteriors.items():
        ia_idx, ib_idx = np.nonzero(pp.match > 0)
        for ia, ib in zip(ia_idx.tolist(), ib_idx.tolist()):
            ca = state.col_of[(a, ia)]
            cb = state.col_of[(b, ib)]
            gain = _merge_gain(state, posteriors, ca, cb, gap_factor)
            if gain > 0:
                heapq.heappush(heap, (-gain, ca, cb))

    while heap:
        neg_gain, ca, cb = heapq.heappop(heap)
        if ca not in state.cells or cb not in state.cells:
            continue
        taxa_a = set(state.cells[ca])
        taxa_b = set(state.cells[cb])
        if taxa_a & taxa_b:
            continue
        gain = _merge_gain(state, posteriors, ca, cb, gap_factor)
        if gain <= 0:
            continue
        if abs(gain - (-neg_gain)) > 1e-12:
            heapq.heappush(heap, (-gain, ca, cb))  # stale entry, rescore
            continue
        if state.reachable(ca, cb) or state.reachable(cb, ca):
            continue
        state.merge(ca, cb)
        for other in list(state.cells):
            if other == ca:
                continue
            if set(state.cells[other]) & set(state.cells[ca]):
                continue
            g = _merge_gain(state, posteriors, ca, other, gap_factor)
            if g > 0:
                heapq.heappush(heap, (-g, ca, other))

    ordered = state.ordered_columns()
    n_taxa = len(taxa)
    columns = tuple(
        tuple(col.get(k, GAP) for k in range(n_taxa)) for col in ordered
    )
    alignment = Alignment(taxa, sequences, columns)
    accuracies = [
        _column_accuracies(col, posteriors, n_taxa) for col in ordered
    ]
    return alignment, accuracies


def _column_accuracies(col: dict[int, int], posteriors, n_taxa: int) -> tuple[float, ...]:
    out = []
    for k in range(n_taxa):
        if k in col:
            acc = 0.0
            for b in range(n_taxa):
                if b == k:
                    continue
                match, gap = _pair_lookup(posteriors, k, b)
                if b in col:
                    acc += match[col[k], col[b]]
                else:
                    acc += gap[col[k]]
            out.append(acc / (n_taxa - 1))
        else:
            # gap cell: how confidently is each resident base unaligned to k
            accs = []
            for b, ib in col.items():
                _, gap_b = _pair_lookup(posteriors, b, k)
                accs.append(gap_b[ib])
            out.append(float(np.mean(accs)) if accs else 1.0)
    return tuple(out)


def alignment_expected_accuracy(
    alignment: Alignment,
    posteriors: dict[tuple[int, int], PairPosterior],
    gap_factor: float = 0.5,
) -> float:
    """Total expected-accuracy score of an alignment: matched-pair posterior
    mass plus gap_factor times the unaligned mass of unmatched cells."""
    n_taxa = len(alignment.taxa)
    aligned = {}
    for col in alignment.columns:
        for a in range(n_taxa):
            if col[a] == GAP:
                continue
            for b in range(n_taxa):
                if a != b and col[b] != GAP:
                    aligned[(a, col[a], b)] = col[b]
    total = 0.0
    for a in range(n_taxa):
        for b in range(n_taxa):
            if a == b:
                continue
            match, gap = _pair_lookup(posteriors, a, b)
            for ia in range(len(alignment.sequences[a])):
                ib = aligned.get((a, ia, b))
                if ib is None:
                    total += gap_factor * gap[ia]
                else:
                    total += 0.5 * match[ia, ib]  # each pair counted from both sides
    return total


# ---------------------------------------------------------------------------
# Topology, split, and indel-process summaries
# ---------------------------------------------------------------------------


def topology_split_table(trees: list[Tree]):
    """Relative frequencies of canonical topologies and of every split."""
    if not trees:
        raise ValueError("no samples")
    n = trees[0].n_taxa
    topo_counts: dict = {}
    split_counts: dict = {}
    for tree in trees:
        topo_counts[topology_key(tree)] = topo_counts.get(topology_key(tree), 0) + 1
        for leaves in tree.splits:
            key = canonical_split(leaves, n)
            split_counts[key] = split_counts.get(key, 0) + 1
    m = len(trees)
    topo = {k: c / m for k, c in topo_counts.items()}
    splits = {k: c / m for k, c in split_counts.items()}
    return topo, splits


def split_indel_stats(samples: list[tuple[Tree, TreeHistory]]):
    """Per split: (posterior probability, mean event count given the split,
    mean edge length given the split)."""
    if not samples:
        raise ValueError("no samples")
    n = samples[0][0].n_taxa
    counts: dict = {}
    events: dict = {}
    lengths: dict = {}
    for tree, history in samples:
        for eidx, leaves in enumerate(tree.splits):
            key = canonical_split(leaves, n)
            counts[key] = counts.get(key, 0) + 1
            events[key] = events.get(key, 0) + len(history.edge_histories[eidx].events)
            lengths[key] = lengths.get(key, 0.0) + tree.lengths[eidx]
    m = len(samples)
    return {
        key: (counts[key] / m, events[key] / counts[key], lengths[key] / counts[key])
        for key in counts
    }


def fragment_size_posterior(histories: list[TreeHistory]) -> dict[int, float]:
    """Average of per-sample empirical fragment-size distributions, pooling
    insertions and deletions.  Event-free samples do not contribute; an empty
    result means no sample had any event."""
    sums: dict[int, float] = {}
    contributing = 0
    for history in histories:
        sizes = [
            e.size for h in history.edge_histories for e in h.events
        ]
        if not sizes:
            continue
        contributing += 1
        w = 1.0 / len(sizes)
        for s in sizes:
            sums[s] = sums.get(s, 0.0) + w
    if contributing == 0:
        return {}
    return {s: total / contributing for s, total in sorted(sums.items())}


# ---------------------------------------------------------------------------
# Convergence diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GelmanRubin:
    r: float
    degenerate: bool


def gelman_rubin(chains: list[np.ndarray] | np.ndarray) -> GelmanRubin:
    """Potential scale reduction sqrt(((n-1)/n W + B/n) / W) for m equal-length
    chains; degenerate when the pooled within-chain variance vanishes."""
    traces = np.asarray(chains, dtype=float)
    if traces.ndim != 2 or traces.shape[0] < 2 or traces.shape[1] < 2:
        raise ValueError("need >= 2 chains of equal length >= 2")
    m, n = traces.shape
    within = traces.var(axis=1, ddof=1).mean()
    means = traces.mean(axis=1)
    between = n * means.var(ddof=1)
    if within == 0.0:
        return GelmanRubin(float("nan"), True)
    var_hat = (n - 1) / n * within + between / n
    return GelmanRubin(float(math.sqrt(var_hat / within)), False)


def clade_frequency_spreads(
    runs: list[list[Tree]], threshold: float = 0.05
) -> tuple[dict, bool]:
    """Per split: max - min relative frequency across runs; the flag is True
    when every spread is below the threshold."""
    if len(runs) < 2:
        raise ValueError("need >= 2 runs")
    n = runs[0][0].n_taxa
    freqs: list[dict] = []
    all_keys: set = set()
    for trees in runs:
        _, splits = topology_split_table(trees)
        freqs.append(splits)
        all_keys |= set(splits)
    spreads = {}
    for key in all_keys:
        vals = [f.get(key, 0.0) for f in freqs]
        spreads[key] = max(vals) - min(vals)
    ok = all(v < threshold for v in spreads.values())
    return spreads, ok


def majority_rule_splits(trees: list[Tree]) -> set:
    """Nontrivial splits appearing in more than half of the samples."""
    n = trees[0].n_taxa
    _, splits = topology_split_table(trees)
    return {
        key for key, p in splits.items()
        if p > 0.5 and 2 <= len(key) <= n - 2
    }
