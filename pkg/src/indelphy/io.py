"""Parsers and serializers: FASTA, Newick, history strings, sample logs.

Sample logs are tab-separated, append-only, and self-describing: the header
carries the config hash, the input sequences, and the column names.  Trees
are written in a canonical rooted-at-first-taxon form whose edge numbering is
reproduced exactly by the parser, so history columns can reference edges by
index.  Event times are written with 17 significant digits so replay is
exact.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import RunConfig, config_hash
from .engine import ChainSample
from .indel import GeometricSizes, IndelParams, NegativeBinomialSizes, PowerLawSizes
from .types import (
    DELETION,
    INSERTION,
    EdgeHistory,
    IndelEvent,
    Sequence,
    Tree,
    TreeHistory,
    node_lengths,
    rerooted_history,
    tree_from_links,
)


class ParseError(ValueError):
    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


# ---------------------------------------------------------------------------
# FASTA
# ---------------------------------------------------------------------------


def parse_fasta(text: str) -> list[Sequence]:
    """Standard FASTA; the taxon name is the first whitespace-delimited token
    of the header and bases are uppercased.  Rejects empty input, duplicate
    names, and non-ACGT residues with line/column diagnostics."""
    sequences: list[Sequence] = []
    name: str | None = None
    chunks: list[str] = []
    seen: set[str] = set()

    def flush():
        if name is None:
            return
        sequences.append(Sequence(name, "".join(chunks)))

    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            flush()
            header = line[1:].strip()
            if not header:
                raise ParseError(f"line {lineno}: empty FASTA header")
            name = header.split()[0]
            if name in seen:
                raise ParseError(f"line {lineno}: duplicate taxon name {name!r}")
            seen.add(name)
            chunks = []
        else:
            if name is None:
                raise ParseError(f"line {lineno}: sequence data before any header")
            upper = line.upper()
            for col, ch in enumerate(upper, start=1):
                if ch not in "ACGT":
                    raise ParseError(
                        f"line {lineno}, column {col}: illegal residue {ch!r}"
                    )
            chunks.append(upper)
    flush()
    if not sequences:
        raise ParseError("no sequences found")
    return sequences


def write_fasta(sequences: list[Sequence], width: int = 70) -> str:
    lines = []
    for s in sequences:
        lines.append(f">{s.name}")
        for i in range(0, max(len(s), 1), width):
            lines.append(s.bases[i : i + width])
    return "\n".join(lines) + "\n"


def write_gapped_fasta(rows: dict[str, str], width: int = 70) -> str:
    lines = []
    for name, row in rows.items():
        lines.append(f">{name}")
        for i in range(0, max(len(row), 1), width):
            lines.append(row[i : i + width])
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Newick
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def canonicalize(tree: Tree, history: TreeHistory | None = None):
    """Re-root at the internal node next to the first taxon and renumber the
    edges in the order the Newick writer emits them.  Children are ordered by
    their smallest descendant taxon."""
    root = next(other for _, other in tree.adjacency[0] if tree.is_internal(other))
    rooted = tree.with_history_root(root)
    rehist = rerooted_history(history, tree, rooted) if history is not None else None

    min_leaf: dict[int, str] = {}

    def find_min(node: int) -> str:
        if node < tree.n_taxa:
            min_leaf[node] = tree.taxa[node]
        else:
            min_leaf[node] = min(find_min(c) for _, c in rooted.children[node])
        return min_leaf[node]

    find_min(root)
    # edges numbered in the order their ':length' token appears in the Newick
    # text: a child's whole subtree renders before the child edge itself
    edge_order: list[int] = []

    def visit(node: int):
        for eidx, child in sorted(
            rooted.children[node], key=lambda ec: min_leaf[ec[1]]
        ):
            visit(child)
            edge_order.append(eidx)

    visit(root)
    links = [rooted.edges[e] for e in edge_order]
    lengths = [rooted.lengths[e] for e in edge_order]
    # renumber internal nodes in first-encounter order over the links, which
    # is exactly how the parser assigns ids, so canonical forms are identical
    relabel: dict[int, int] = {k: k for k in range(tree.n_taxa)}
    next_id = tree.n_taxa
    for a, b in links:
        for node in (a, b):
            if node not in relabel:
                relabel[node] = next_id
                next_id += 1
    links = [(relabel[a], relabel[b]) for a, b in links]
    new_tree = tree_from_links(tree.taxa, links, lengths, history_root=relabel[root])
    if rehist is None:
        return new_tree, None
    new_hist = TreeHistory(
        rehist.root_length, tuple(rehist.edge_histories[e] for e in edge_order)
    )
    return new_tree, new_hist


def write_newick(tree: Tree) -> str:
    """Canonical Newick with branch lengths at full precision.  The top-level
    node is the trifurcating history root of the canonical form."""
    canon, _ = canonicalize(tree)

    def render(node: int) -> str:
        parts = []
        for eidx, child in canon.children[node]:
            sub = (
                canon.taxa[child]
                if child < canon.n_taxa
                else f"({render(child)})"
            )
            parts.append(f"{sub}:{_fmt(canon.lengths[eidx])}")
        return ",".join(parts)

    return f"({render(canon.history_root)});"


def parse_newick(text: str) -> Tree:
    """Parse a Newick string into a canonical-ordered Tree.  Edge indices
    follow the order branch lengths appear in the string.  A bifurcating
    top-level node (rooted convention) is collapsed by summing the two root
    edges."""
    text = text.strip()
    pos = 0

    def error(msg: str):
        raise ParseError(msg, pos)

    def peek() -> str:
        return text[pos] if pos < len(text) else ""

    names: list[str] = []
    raw_links: list[tuple[int, int, float]] = []  # (a, b, length) with temp ids
    next_tmp = [0]

    def new_node() -> int:
        next_tmp[0] += 1
        return next_tmp[0] - 1

    def parse_length() -> float:
        nonlocal pos
        if peek() != ":":
            error("expected ':' before branch length")
        pos += 1
        start = pos
        while pos < len(text) and (text[pos].isdigit() or text[pos] in ".-+eE"):
            pos += 1
        if start == pos:
            error("missing branch length")
        try:
            return float(text[start:pos])
        except ValueError:
            error(f"bad branch length {text[start:pos]!r}")

    def parse_name() -> str:
        nonlocal pos
        start = pos
        while pos < len(text) and text[pos] not in "():,;":
            pos += 1
        name = text[start:pos].strip()
        if not name:
            error("expected taxon name")
        return name

    def parse_clade(parent: int):
        nonlocal pos
        if peek() == "(":
            pos += 1
            node = new_node()
            parse_clade(node)
            while peek() == ",":
                pos += 1
                parse_clade(node)
            if peek() != ")":
                error("expected ')'")
            pos += 1
            length = parse_length()
            raw_links.append((parent, node, length))
        else:
            name = parse_name()
            node = new_node()
            names.append((name, node))
            length = parse_length()
            raw_links.append((parent, node, length))

    if peek() != "(":
        error("tree must start with '('")
    pos += 1
    top = new_node()
    parse_clade(top)
    children_of_top = 1
    while peek() == ",":
        pos += 1
        parse_clade(top)
        children_of_top += 1
    if peek() != ")":
        error("expected ')'")
    pos += 1
    if peek() != ";":
        error("expected ';'")
    pos += 1
    if pos != len(text):
        error("trailing characters after ';'")

    taxa_names = sorted(n for n, _ in names)
    if len(set(taxa_names)) != len(taxa_names):
        raise ParseError("duplicate taxon names in tree")
    name_to_leaf = {n: i for i, n in enumerate(taxa_names)}
    tmp_to_node: dict[int, int] = {}
    for name, tmp in names:
        tmp_to_node[tmp] = name_to_leaf[name]
    n = len(taxa_names)
    next_internal = [n]

    def node_id(tmp: int) -> int:
        if tmp not in tmp_to_node:
            tmp_to_node[tmp] = next_internal[0]
            next_internal[0] += 1
        return tmp_to_node[tmp]

    if children_of_top == 2:
        top_links = [(a, b, l) for (a, b, l) in raw_links if a == top]
        if len(top_links) != 2:
            raise ParseError("malformed rooted top node")
        (_, c1, l1), (_, c2, l2) = top_links
        merged = (c1, c2, l1 + l2)
        raw_links = [x for x in raw_links if x[0] != top]
        raw_links.insert(0, merged)
    elif children_of_top < 2:
        raise ParseError("top-level node must have at least 2 children")

    links = []
    lengths = []
    for a, b, l in raw_links:
        links.append((node_id(a), node_id(b)))
        lengths.append(l)
    tree = tree_from_links(
        tuple(taxa_names), links, lengths,
        history_root=None if children_of_top == 2 else node_id(top),
    )
    return tree


# ---------------------------------------------------------------------------
# History serialization
# ---------------------------------------------------------------------------


def serialize_history(history: TreeHistory) -> str:
    """Compact per-edge event list: root=N|0:(t,i,p,l);(t,d,p,l)|1:|..."""
    parts = [f"root={history.root_length}"]
    for eidx, h in enumerate(history.edge_histories):
        evs = ";".join(
            f"({_fmt(e.t)},{e.kind},{e.pos},{e.size})" for e in h.events
        )
        parts.append(f"{eidx}:{evs}")
    return "|".join(parts)


def parse_history(text: str, tree: Tree) -> TreeHistory:
    """Inverse of serialize_history; per-edge endpoint lengths are rebuilt by
    replaying events from the root."""
    parts = text.split("|")
    if not parts or not parts[0].startswith("root="):
        raise ParseError("history must start with root=N")
    root_length = int(parts[0][5:])
    events_by_edge: dict[int, list[tuple[float, str, int, int]]] = {}
    for part in parts[1:]:
        head, _, body = part.partition(":")
        eidx = int(head)
        evs = []
        if body:
            for chunk in body.split(";"):
                if not (chunk.startswith("(") and chunk.endswith(")")):
                    raise ParseError(f"bad event {chunk!r}")
                t_s, kind, p_s, l_s = chunk[1:-1].split(",")
                if kind not in (INSERTION, DELETION):
                    raise ParseError(f"bad event kind {kind!r}")
                evs.append((float(t_s), kind, int(p_s), int(l_s)))
        events_by_edge[eidx] = evs
    if set(events_by_edge) != set(range(len(tree.edges))):
        raise ParseError("history edge ids do not match the tree")
    lengths_at = [0] * tree.n_nodes
    lengths_at[tree.history_root] = root_length
    histories: list[EdgeHistory | None] = [None] * len(tree.edges)
    for eidx in tree.preorder_edges:
        parent, child = tree.edges[eidx]
        n = lengths_at[parent]
        n0 = n
        evs = []
        for t, kind, p, l in events_by_edge[eidx]:
            n = n + l if kind == INSERTION else n - l
            evs.append(IndelEvent(t, kind, p, l, n))
        histories[eidx] = EdgeHistory(tuple(evs), n0, n, tree.lengths[eidx])
        lengths_at[child] = n
    return TreeHistory(root_length, tuple(histories))


# ---------------------------------------------------------------------------
# Sample logs
# ---------------------------------------------------------------------------

LOG_COLUMNS = (
    "iteration", "log_posterior", "r", "r_d", "lambda", "kappa",
    "pi_A", "pi_C", "pi_G", "pi_T", "gamma", "n_events",
    "tree", "history", "frag_sizes",
)


@dataclass(frozen=True)
class SampleRecord:
    iteration: int
    log_posterior: float
    params: dict
    tree: Tree
    history: TreeHistory
    n_events: int
    frag_sizes: dict[int, int]


@dataclass
class RunLog:
    config_hash: str
    sequences: list[Sequence]
    records: list[SampleRecord]


def _r_d_of(indel: IndelParams) -> float:
    d = indel.deletion_sizes
    return d.r_d if isinstance(d, GeometricSizes) else float("nan")


def format_sample(sample: ChainSample) -> str:
    """One log row; the tree is canonicalized and the history re-indexed to
    match, so the row is self-contained."""
    tree_c, hist_c = canonicalize(sample.tree, sample.history)
    sizes: dict[int, int] = {}
    for h in hist_c.edge_histories:
        for e in h.events:
            sizes[e.size] = sizes.get(e.size, 0) + 1
    frag = ",".join(f"{s}:{c}" for s, c in sorted(sizes.items())) or "-"
    fields = [
        str(sample.iteration),
        _fmt(sample.log_posterior),
        _fmt(sample.indel.r),
        _fmt(_r_d_of(sample.indel)),
        _fmt(sample.indel.lam),
        _fmt(sample.subst.kappa),
        *(_fmt(p) for p in sample.subst.pi),
        _fmt(sample.gamma),
        str(hist_c.total_events),
        write_newick(tree_c),
        serialize_history(hist_c),
        frag,
    ]
    return "\t".join(fields)


def log_header(cfg: RunConfig, sequences: list[Sequence]) -> str:
    lines = [f"#indelphy-samples\tv=1\tconfig_hash={config_hash(cfg)}"]
    taxa = "\t".join(f"{s.name}={s.bases}" for s in sorted(sequences, key=lambda s: s.name))
    lines.append(f"#taxa\t{taxa}")
    lines.append("#" + "\t".join(LOG_COLUMNS))
    return "\n".join(lines) + "\n"


def parse_sample_log(text: str) -> RunLog:
    lines = text.splitlines()
    if len(lines) < 3 or not lines[0].startswith("#indelphy-samples"):
        raise ParseError("not a sample log")
    hash_field = [f for f in lines[0].split("\t") if f.startswith("config_hash=")]
    cfg_hash = hash_field[0].split("=", 1)[1] if hash_field else ""
    taxa_fields = lines[1].split("\t")[1:]
    sequences = []
    for field in taxa_fields:
        name, _, bases = field.partition("=")
        sequences.append(Sequence(name, bases))
    records = []
    for line in lines[3:]:
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != len(LOG_COLUMNS):
            raise ParseError(f"malformed record with {len(cols)} fields")
        tree = parse_newick(cols[12])
        history = parse_history(cols[13], tree)
        frag = {}
        if cols[14] != "-":
            for chunk in cols[14].split(","):
                s, _, c = chunk.partition(":")
                frag[int(s)] = int(c)
        params = {
            "r": float(cols[2]),
            "r_d": float(cols[3]),
            "lambda": float(cols[4]),
            "kappa": float(cols[5]),
            "pi_A": float(cols[6]),
            "pi_C": float(cols[7]),
            "pi_G": float(cols[8]),
            "pi_T": float(cols[9]),
            "gamma": float(cols[10]),
        }
        records.append(
            SampleRecord(
                int(cols[0]), float(cols[1]), params, tree, history,
                int(cols[11]), frag,
            )
        )
    return RunLog(cfg_hash, sequences, records)


def make_size_distribution(cfg: RunConfig, r_d: float):
    if cfg.deletion_dist == "geometric":
        return GeometricSizes(r_d)
    if cfg.deletion_dist == "negative_binomial":
        return NegativeBinomialSizes(cfg.nb_shape, cfg.nb_prob)
    if cfg.deletion_dist == "power_law":
        return PowerLawSizes(cfg.pl_exponent, cfg.pl_cutoff)
    raise ValueError(f"unknown deletion size distribution {cfg.deletion_dist!r}")
