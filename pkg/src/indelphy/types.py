"""Core value types: sequences, trees, indel events and histories, alignments.

All types are immutable values after construction and safe to share across
threads.  Positions follow the between-base convention: a sequence of n bases
has n + 1 positions numbered 0..n, and base i (1-based) sits between positions
i - 1 and i.  An insertion at position p adds new bases between base p and
base p + 1; a deletion of size l at position p removes bases p + 1 .. p + l.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

DNA_BASES = "ACGT"
BASE_INDEX = {b: i for i, b in enumerate(DNA_BASES)}
GAP = -1

INSERTION = "i"
DELETION = "d"


@dataclass(frozen=True)
class Sequence:
    """An observed DNA sequence.  Bases restricted to A, C, G, T."""

    name: str
    bases: str

    def __post_init__(self):
        bad = set(self.bases) - set(DNA_BASES)
        if bad:
            raise ValueError(
                f"sequence {self.name!r} contains non-ACGT symbols: {sorted(bad)}"
            )

    def __len__(self) -> int:
        return len(self.bases)

    @property
    def base_indices(self) -> tuple[int, ...]:
        return tuple(BASE_INDEX[b] for b in self.bases)


@dataclass(frozen=True)
class IndelEvent:
    """One insertion or deletion on an edge.

    t is the time of the event measured from the parent node, kind is
    INSERTION or DELETION, pos the position acted on, size the fragment
    length, and n_after the sequence length right after the event.
    """

    t: float
    kind: str
    pos: int
    size: int
    n_after: int

    @property
    def is_insertion(self) -> bool:
        return self.kind == INSERTION


@dataclass(frozen=True)
class EdgeHistory:
    """Time-ordered indel events on a single directed edge.

    n_parent and n_child are the sequence lengths at the two ends; v is the
    edge length.  Events carry times strictly inside (0, v).
    """

    events: tuple[IndelEvent, ...]
    n_parent: int
    n_child: int
    v: float

    @property
    def lengths_before(self) -> tuple[int, ...]:
        """Sequence length just before each event."""
        out = [self.n_parent]
        for e in self.events[:-1]:
            out.append(e.n_after)
        return tuple(out) if self.events else ()


@dataclass(frozen=True)
class Violation:
    """First constraint violated by an invalid history."""

    event_index: int | None
    reason: str


def validate_edge_history(h: EdgeHistory) -> Violation | None:
    """Return None if the history satisfies every invariant, else the first
    violated constraint together with the offending event index."""
    if h.v < 0:
        return Violation(None, "edge length is negative")
    if h.n_parent < 0 or h.n_child < 0:
        return Violation(None, "endpoint length is negative")
    n = h.n_parent
    t_prev = 0.0
    for i, e in enumerate(h.events):
        if not t_prev < e.t:
            return Violation(i, "event times not strictly increasing")
        if not e.t < h.v:
            return Violation(i, "event time at or beyond edge length")
        if e.size < 1:
            return Violation(i, "fragment size must be positive")
        if e.kind == INSERTION:
            if not 0 <= e.pos <= n:
                return Violation(i, f"insertion position {e.pos} outside 0..{n}")
            expected = n + e.size
        elif e.kind == DELETION:
            if not 0 <= e.pos <= n - 1:
                return Violation(i, f"deletion position {e.pos} outside 0..{n - 1}")
            if e.size > n - e.pos:
                return Violation(i, "deletion size exceeds bases right of position")
            expected = n - e.size
        else:
            return Violation(i, f"unknown event kind {e.kind!r}")
        if e.n_after != expected:
            return Violation(i, f"recorded n_after {e.n_after} != {expected}")
        n = expected
        t_prev = e.t
    if n != h.n_child:
        return Violation(None, f"final length {n} != child length {h.n_child}")
    return None


def reverse_edge_history(h: EdgeHistory) -> EdgeHistory:
    """The same history viewed against the flow of time.

    An insertion at time t becomes a deletion at time v - t at the same
    position, and vice versa; event order reverses.
    """
    before = [h.n_parent] + [e.n_after for e in h.events]
    events = []
    for j in range(len(h.events) - 1, -1, -1):
        e = h.events[j]
        kind = DELETION if e.kind == INSERTION else INSERTION
        events.append(IndelEvent(h.v - e.t, kind, e.pos, e.size, before[j]))
    return EdgeHistory(tuple(events), h.n_child, h.n_parent, h.v)


@dataclass(frozen=True)
class Tree:
    """Unrooted bifurcating tree over labeled leaves.

    Leaves take node ids 0..n-1 in the (sorted) order of `taxa`; internal
    nodes take ids n..2n-3.  Edges are stored as (parent, child) pairs
    oriented away from `history_root`, which is the internal node used to
    direct indel histories.  Edge order is significant: histories and
    serialized forms index edges by position in `edges`.
    """

    taxa: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    lengths: tuple[float, ...]
    history_root: int

    def __post_init__(self):
        n = len(self.taxa)
        if n < 3:
            raise ValueError("need at least 3 taxa")
        if list(self.taxa) != sorted(self.taxa) or len(set(self.taxa)) != n:
            raise ValueError("taxa must be unique and sorted")
        if len(self.edges) != 2 * n - 3 or len(self.lengths) != 2 * n - 3:
            raise ValueError(f"expected {2 * n - 3} edges with lengths")
        if any(v <= 0 for v in self.lengths):
            raise ValueError("branch lengths must be positive")
        n_nodes = 2 * n - 2
        degree = [0] * n_nodes
        for a, b in self.edges:
            if not (0 <= a < n_nodes and 0 <= b < n_nodes):
                raise ValueError("edge endpoint out of range")
            degree[a] += 1
            degree[b] += 1
        for node in range(n):
            if degree[node] != 1:
                raise ValueError(f"leaf {node} has degree {degree[node]}")
        for node in range(n, n_nodes):
            if degree[node] != 3:
                raise ValueError(f"internal node {node} has degree {degree[node]}")
        if not self.is_internal(self.history_root):
            raise ValueError("history_root must be an internal node")
        seen = {self.history_root}
        for eidx in self.preorder_edges:
            parent, child = self.edges[eidx]
            if parent not in seen or child in seen:
                raise ValueError("edges are not consistently oriented from history_root")
            seen.add(child)
        if len(seen) != n_nodes:
            raise ValueError("tree is not connected")

    @property
    def n_taxa(self) -> int:
        return len(self.taxa)

    @property
    def n_nodes(self) -> int:
        return 2 * len(self.taxa) - 2

    def is_internal(self, node: int) -> bool:
        return node >= len(self.taxa)

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per node: (edge_index, neighbor) pairs sorted by edge index."""
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.n_nodes)]
        for i, (a, b) in enumerate(self.edges):
            adj[a].append((i, b))
            adj[b].append((i, a))
        return tuple(tuple(sorted(x)) for x in adj)

    @cached_property
    def children(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per node: (edge_index, child) pairs, sorted by edge index."""
        out: list[list[tuple[int, int]]] = [[] for _ in range(self.n_nodes)]
        for i, (parent, child) in enumerate(self.edges):
            out[parent].append((i, child))
        return tuple(tuple(sorted(x)) for x in out)

    @cached_property
    def parent_edge(self) -> tuple[int | None, ...]:
        """Per node: index of the edge toward history_root, None at the root."""
        out: list[int | None] = [None] * self.n_nodes
        for i, (_, child) in enumerate(self.edges):
            out[child] = i
        return tuple(out)

    @cached_property
    def preorder_edges(self) -> tuple[int, ...]:
        """Edge indices with every parent edge before its child edges;
        siblings in edge-index order."""
        order = []
        queue = [self.history_root]
        while queue:
            node = queue.pop(0)
            for eidx, child in self.children[node]:
                order.append(eidx)
                queue.append(child)
        return tuple(order)

    @cached_property
    def splits(self) -> tuple[frozenset[int], ...]:
        """Per edge: the set of leaf ids on the child side."""
        below: list[set[int]] = [{node} if node < self.n_taxa else set()
                                 for node in range(self.n_nodes)]
        for eidx in reversed(self.preorder_edges):
            _, child = self.edges[eidx]
            for _, grandchild in self.children[child]:
                below[child] |= below[grandchild]
        return tuple(frozenset(below[child]) for _, child in self.edges)

    def with_lengths(self, lengths: tuple[float, ...]) -> "Tree":
        """Same topology with new branch lengths; shares cached traversal
        structures and skips structural revalidation."""
        if len(lengths) != len(self.edges) or any(v <= 0 for v in lengths):
            raise ValueError("need one positive length per edge")
        new = object.__new__(Tree)
        object.__setattr__(new, "taxa", self.taxa)
        object.__setattr__(new, "edges", self.edges)
        object.__setattr__(new, "lengths", tuple(lengths))
        object.__setattr__(new, "history_root", self.history_root)
        for name in ("adjacency", "children", "parent_edge", "preorder_edges", "splits"):
            if name in self.__dict__:
                object.__setattr__(new, name, self.__dict__[name])
        return new

    def with_history_root(self, new_root: int) -> "Tree":
        """Same undirected tree, edges re-oriented away from new_root.
        Edge order and lengths are unchanged."""
        if not self.is_internal(new_root):
            raise ValueError("history root must be internal")
        if new_root == self.history_root:
            return self
        oriented: dict[int, tuple[int, int]] = {}
        seen = {new_root}
        queue = [new_root]
        while queue:
            node = queue.pop(0)
            for eidx, other in self.adjacency[node]:
                if other in seen:
                    continue
                oriented[eidx] = (node, other)
                seen.add(other)
                queue.append(other)
        edges = tuple(oriented[i] for i in range(len(self.edges)))
        return Tree(self.taxa, edges, self.lengths, new_root)


def canonical_split(leaves: frozenset[int], n_taxa: int) -> tuple[int, ...]:
    """Orientation-free form of a bipartition: the side not containing leaf 0."""
    if 0 in leaves:
        side = frozenset(range(n_taxa)) - leaves
    else:
        side = leaves
    return tuple(sorted(side))


def topology_key(tree: Tree) -> frozenset[tuple[int, ...]]:
    """Canonical identifier of the unrooted topology: its nontrivial splits."""
    keys = []
    for leaves in tree.splits:
        if 2 <= len(leaves) <= tree.n_taxa - 2:
            keys.append(canonical_split(leaves, tree.n_taxa))
    return frozenset(keys)


def tree_from_links(
    taxa: tuple[str, ...],
    links: list[tuple[int, int]],
    lengths: list[float],
    history_root: int | None = None,
) -> Tree:
    """Build a Tree from undirected (a, b) links, preserving link order as
    edge order.  If history_root is None, use the internal node next to leaf 0."""
    adj: dict[int, list[tuple[int, int]]] = {}
    for i, (a, b) in enumerate(links):
        adj.setdefault(a, []).append((i, b))
        adj.setdefault(b, []).append((i, a))
    n = len(taxa)
    if history_root is None:
        history_root = adj[0][0][1]
    oriented: dict[int, tuple[int, int]] = {}
    seen = {history_root}
    queue = [history_root]
    while queue:
        node = queue.pop(0)
        for eidx, other in sorted(adj[node]):
            if other in seen:
                continue
            oriented[eidx] = (node, other)
            seen.add(other)
            queue.append(other)
    edges = tuple(oriented[i] for i in range(len(links)))
    return Tree(tuple(taxa), edges, tuple(lengths), history_root)


@dataclass(frozen=True)
class TreeHistory:
    """Complete indel history on a tree: one EdgeHistory per edge (parallel to
    Tree.edges, oriented the same way) plus the sequence length at the
    history root."""

    root_length: int
    edge_histories: tuple[EdgeHistory, ...]

    @property
    def total_events(self) -> int:
        return sum(len(h.events) for h in self.edge_histories)


def node_lengths(history: TreeHistory, tree: Tree) -> tuple[int, ...]:
    """Sequence length at every node implied by the history."""
    out = [-1] * tree.n_nodes
    out[tree.history_root] = history.root_length
    for eidx in tree.preorder_edges:
        parent, child = tree.edges[eidx]
        h = history.edge_histories[eidx]
        if out[parent] != h.n_parent:
            raise ValueError(
                f"edge {eidx}: recorded parent length {h.n_parent} != {out[parent]}"
            )
        out[child] = h.n_child
    return tuple(out)


def validate_tree_history(
    history: TreeHistory,
    tree: Tree,
    leaf_lengths: dict[str, int] | None = None,
) -> Violation | None:
    """Check per-edge validity, node-length consistency, and (optionally)
    agreement with observed leaf lengths."""
    if len(history.edge_histories) != len(tree.edges):
        return Violation(None, "edge history count != edge count")
    if history.root_length < 0:
        return Violation(None, "negative root length")
    for eidx, h in enumerate(history.edge_histories):
        viol = validate_edge_history(h)
        if viol is not None:
            return Violation(viol.event_index, f"edge {eidx}: {viol.reason}")
        if abs(h.v - tree.lengths[eidx]) > 1e-12 * max(1.0, tree.lengths[eidx]):
            return Violation(None, f"edge {eidx}: history length {h.v} != branch length")
    try:
        lengths = node_lengths(history, tree)
    except ValueError as err:
        return Violation(None, str(err))
    if leaf_lengths is not None:
        for k, name in enumerate(tree.taxa):
            if lengths[k] != leaf_lengths[name]:
                return Violation(
                    None, f"leaf {name}: history length {lengths[k]} != observed"
                )
    return None


def rerooted_history(history: TreeHistory, tree: Tree, new_tree: Tree) -> TreeHistory:
    """Re-express a history against a tree re-oriented to another history root.

    new_tree must be tree.with_history_root(...): same edges in the same
    order, possibly flipped.  Flipped edges get time-reversed histories.
    """
    lengths = node_lengths(history, tree)
    out = []
    for eidx in range(len(tree.edges)):
        if tree.edges[eidx] == new_tree.edges[eidx]:
            out.append(history.edge_histories[eidx])
        else:
            out.append(reverse_edge_history(history.edge_histories[eidx]))
    return TreeHistory(lengths[new_tree.history_root], tuple(out))


# ---------------------------------------------------------------------------
# Alignment projection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Alignment:
    """Column structure induced by a history, with residue-level homology.

    columns[c][k] is the 0-based index of taxon k's base in column c, or GAP.
    sequences[k] is the gap-free row for taxon k.
    """

    taxa: tuple[str, ...]
    sequences: tuple[str, ...]
    columns: tuple[tuple[int, ...], ...]

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    def matrix(self) -> list[str]:
        """Rows of the alignment with '-' for gaps."""
        rows = []
        for k, seq in enumerate(self.sequences):
            rows.append("".join(seq[col[k]] if col[k] != GAP else "-" for col in self.columns))
        return rows


def replay_lineages(history: TreeHistory, tree: Tree):
    """Replay the history from the root, minting a fresh lineage id per
    inserted residue.

    Returns (node_seqs, order): per-node lists of lineage ids, and a global
    left-to-right ordering of every id ever minted.  Inserted fragments are
    spliced into the global order at their ancestral position; simultaneous
    insertions at the same position are ordered by edge processing order
    (preorder, ties by edge index).
    """
    root_ids = list(range(history.root_length))
    order = list(root_ids)
    node_seqs: list[list[int] | None] = [None] * tree.n_nodes
    node_seqs[tree.history_root] = root_ids
    next_id = history.root_length
    for eidx in tree.preorder_edges:
        parent, child = tree.edges[eidx]
        cur = list(node_seqs[parent])
        for ev in history.edge_histories[eidx].events:
            if ev.kind == INSERTION:
                new_ids = list(range(next_id, next_id + ev.size))
                next_id += ev.size
                if ev.pos < len(cur):
                    gi = order.index(cur[ev.pos])
                elif cur:
                    gi = order.index(cur[-1]) + 1
                else:
                    gi = len(order)
                order[gi:gi] = new_ids
                cur[ev.pos:ev.pos] = new_ids
            else:
                del cur[ev.pos : ev.pos + ev.size]
        node_seqs[child] = cur
    return node_seqs, order


def leaf_columns(history: TreeHistory, tree: Tree) -> list[tuple[int, ...]]:
    """Alignment columns as per-taxon base indices (GAP where absent),
    in canonical left-to-right order."""
    node_seqs, order = replay_lineages(history, tree)
    n = tree.n_taxa
    present: dict[int, dict[int, int]] = {}
    for k in range(n):
        for b, lid in enumerate(node_seqs[k]):
            present.setdefault(lid, {})[k] = b
    cols = []
    for lid in order:
        members = present.get(lid)
        if members is None:
            continue
        cols.append(tuple(members.get(k, GAP) for k in range(n)))
    return cols


def project_alignment(
    history: TreeHistory, tree: Tree, sequences: list[Sequence]
) -> Alignment:
    """Project a tree history onto its induced multiple alignment.

    Residues sharing a lineage id share a column; no column is all-gaps;
    columns are in canonical order.  Rejects histories whose implied leaf
    lengths disagree with the given sequences.
    """
    by_name = {s.name: s for s in sequences}
    if set(by_name) != set(tree.taxa):
        raise ValueError("sequence names do not match tree taxa")
    viol = validate_tree_history(
        history, tree, leaf_lengths={s.name: len(s) for s in sequences}
    )
    if viol is not None:
        raise ValueError(f"inconsistent history: {viol.reason}")
    cols = leaf_columns(history, tree)
    rows = tuple(by_name[name].bases for name in tree.taxa)
    return Alignment(tree.taxa, rows, tuple(cols))
