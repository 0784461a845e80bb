"""MCMC proposal kernels with exact forward and reverse log-densities.

Kernels:
  - edge-history resampling, basic and target-aware (guided) variants,
    conditional on the endpoint sequence lengths of one edge;
  - branch-length rescaling that carries event times along;
  - internal-node update (node length + three adjacent edges);
  - subtree prune and regraft;
  - parameter random walks for pi, kappa, gamma, r, r_d, lambda.

Every kernel reports log forward density, log reverse density, and the log
Jacobian of any deterministic coordinate map, so the Metropolis-Hastings
ratio is exact across dimension changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .hky import SubstParams
from .indel import GeometricSizes, IndelParams
from .types import (
    DELETION,
    INSERTION,
    EdgeHistory,
    IndelEvent,
    Tree,
    TreeHistory,
    node_lengths,
    reverse_edge_history,
    tree_from_links,
)

NEG_INF = float("-inf")


@dataclass(frozen=True)
class Tuning:
    """Kernel tuning knobs; all are config-exposed."""

    w_stop: float = 0.5       # extra stop mass when current length hits the target
    w_dir: float = 0.8        # tilt toward the event type that closes the gap
    w_exact: float = 0.3      # mixture mass on the exact deficit fragment size
    branch_delta: float = 0.5  # half-width of log-scale branch walk
    param_delta: float = 0.5   # half-width of log-scale parameter walks
    unit_delta: float = 0.1    # half-width of reflected walks on (0, 1)
    node_step: int = 3         # node-length integer steps are +-1..node_step
    dirichlet_conc: float = 500.0
    guided_prob: float = 0.5   # chance the edge move uses the guided kernel


@dataclass(frozen=True)
class ProposalOutcome:
    """State fragment plus the densities needed for the acceptance ratio.

    Fields left as None are unchanged.  alignment_changed tells the engine
    whether the induced alignment may differ (branch rescaling preserves it).
    """

    log_forward: float
    log_reverse: float
    log_jacobian: float = 0.0
    tree: Tree | None = None
    history: TreeHistory | None = None
    subst: SubstParams | None = None
    indel: IndelParams | None = None
    gamma: float | None = None
    alignment_changed: bool = False


# ---------------------------------------------------------------------------
# Basic edge-history kernel
# ---------------------------------------------------------------------------
#
# A provisional history is run forward from the parent length with the model's
# own jump process.  If it ends at the wrong length, one repair event is
# appended at a uniform time in the remaining interval with the forced type
# and size and a uniform position.  For K >= 1 the final event of any valid
# history always matches the repair pattern, so its density is the sum of the
# generative route (event density times the no-further-event tail) and the
# repair route (overshoot probability times uniform time and position).


def propose_edge_history_basic(
    n0: int, nv: int, v: float, params: IndelParams, rng
) -> tuple[EdgeHistory, float]:
    events = []
    n = n0
    t = 0.0
    while True:
        eta = params.eta(n)
        t_next = t + rng.exponential(1.0 / eta)
        if t_next >= v:
            break
        if rng.random() < (n + 1) * params.lam / eta:
            pos = int(rng.integers(n + 1))
            size = params.sample_insertion_size(rng)
            n += size
            events.append(IndelEvent(t_next, INSERTION, pos, size, n))
        else:
            pos, size = params.sample_deletion(n, rng)
            n -= size
            events.append(IndelEvent(t_next, DELETION, pos, size, n))
        t = t_next
    if n != nv:
        t_rep = rng.uniform(t, v)
        if nv > n:
            size = nv - n
            pos = int(rng.integers(n + 1))
            events.append(IndelEvent(t_rep, INSERTION, pos, size, nv))
        else:
            size = n - nv
            pos = int(rng.integers(n - size + 1))
            events.append(IndelEvent(t_rep, DELETION, pos, size, nv))
    h = EdgeHistory(tuple(events), n0, nv, v)
    return h, basic_log_density(h, params)


def _model_event_logp(e: IndelEvent, params: IndelParams) -> float:
    """log of lambda i(l) for insertions or mu d(l) for deletions; position
    and type probabilities cancel against the uniform position choice."""
    if e.is_insertion:
        lp = params.insertion_log_pmf(e.size)
        return NEG_INF if lp == NEG_INF else math.log(params.lam) + lp
    ld = params.deletion_sizes.log_pmf(e.size)
    return NEG_INF if ld == NEG_INF else math.log(params.mu) + ld


def basic_log_density(h: EdgeHistory, params: IndelParams) -> float:
    """Exact log Q(h | v, n0, nv) for the basic kernel."""
    if not h.events:
        if h.n_parent != h.n_child:
            return NEG_INF
        return -params.eta(h.n_parent) * h.v
    logp = 0.0
    n = h.n_parent
    t_prev = 0.0
    for e in h.events[:-1]:
        logp += -params.eta(n) * (e.t - t_prev) + _model_event_logp(e, params)
        if logp == NEG_INF:
            return NEG_INF
        n = e.n_after
        t_prev = e.t
    e = h.events[-1]
    eta_k = params.eta(n)
    gen = (
        -eta_k * (e.t - t_prev)
        - params.eta(e.n_after) * (h.v - e.t)
        + _model_event_logp(e, params)
    )
    pos_count = (n + 1) if e.is_insertion else (n - e.size + 1)
    rep = -eta_k * (h.v - t_prev) - math.log(h.v - t_prev) - math.log(pos_count)
    return logp + np.logaddexp(gen, rep)


# ---------------------------------------------------------------------------
# Guided edge-history kernel
# ---------------------------------------------------------------------------
#
# Same skeleton with three modifications, each carrying explicit weight so the
# density stays exactly computable:
#   (a) whenever the current length equals the target, stop immediately with
#       probability w_stop before drawing the next waiting time;
#   (b) when the lengths differ, the event type closes the gap with
#       probability w_dir (model-proportional when they match);
#   (c) when the gap is closable by one event, the fragment size is the exact
#       deficit with probability w_exact, else a draw from the model size law.


def _guided_p_ins(n: int, nv: int, params: IndelParams, tuning: Tuning) -> float:
    if n == 0:
        return 1.0
    if n < nv:
        return tuning.w_dir
    if n > nv:
        return 1.0 - tuning.w_dir
    return (n + 1) * params.lam / params.eta(n)


def _guided_ins_size_logp(
    size: int, n: int, nv: int, params: IndelParams, tuning: Tuning
) -> float:
    base = params.insertion_log_pmf(size)
    deficit = nv - n
    if deficit >= 1:
        p = (1.0 - tuning.w_exact) * (math.exp(base) if base > NEG_INF else 0.0)
        if size == deficit:
            p += tuning.w_exact
        return math.log(p) if p > 0 else NEG_INF
    return base


def _guided_del_size_logp(
    size: int, n: int, nv: int, params: IndelParams, tuning: Tuning
) -> float:
    # model size law truncated to feasible sizes: (n - l + 1) d(l) / f(n)
    base = (
        math.log(n - size + 1)
        + params.deletion_sizes.log_pmf(size)
        - math.log(params.f(n))
    ) if params.deletion_sizes.pmf(size) > 0 and size <= n else NEG_INF
    excess = n - nv
    if excess >= 1:
        p = (1.0 - tuning.w_exact) * (math.exp(base) if base > NEG_INF else 0.0)
        if size == excess:
            p += tuning.w_exact
        return math.log(p) if p > 0 else NEG_INF
    return base


def _sample_guided_ins_size(n, nv, params, tuning, rng) -> int:
    deficit = nv - n
    if deficit >= 1 and rng.random() < tuning.w_exact:
        return deficit
    return params.sample_insertion_size(rng)


def _sample_guided_del_size(n, nv, params, tuning, rng) -> int:
    excess = n - nv
    if excess >= 1 and rng.random() < tuning.w_exact:
        return excess
    cum = params.deletion_cumweights(n)
    return int(np.searchsorted(cum, rng.random())) + 1


def propose_edge_history_guided(
    n0: int, nv: int, v: float, params: IndelParams, tuning: Tuning, rng
) -> tuple[EdgeHistory, float]:
    events = []
    n = n0
    t = 0.0
    while True:
        if n == nv and rng.random() < tuning.w_stop:
            break
        eta = params.eta(n)
        t_next = t + rng.exponential(1.0 / eta)
        if t_next >= v:
            break
        if rng.random() < _guided_p_ins(n, nv, params, tuning):
            size = _sample_guided_ins_size(n, nv, params, tuning, rng)
            pos = int(rng.integers(n + 1))
            n += size
            events.append(IndelEvent(t_next, INSERTION, pos, size, n))
        else:
            size = _sample_guided_del_size(n, nv, params, tuning, rng)
            pos = int(rng.integers(n - size + 1))
            n -= size
            events.append(IndelEvent(t_next, DELETION, pos, size, n))
        t = t_next
    if n != nv:
        t_rep = rng.uniform(t, v)
        if nv > n:
            size = nv - n
            pos = int(rng.integers(n + 1))
            events.append(IndelEvent(t_rep, INSERTION, pos, size, nv))
        else:
            size = n - nv
            pos = int(rng.integers(n - size + 1))
            events.append(IndelEvent(t_rep, DELETION, pos, size, nv))
    h = EdgeHistory(tuple(events), n0, nv, v)
    return h, guided_log_density(h, params, tuning)


def _guided_event_logp(
    e: IndelEvent, n: int, nv: int, t_prev: float, params: IndelParams, tuning: Tuning
) -> float:
    """Log-density of generating event e from state (t_prev, n): survive the
    stop coin if armed, draw the waiting time, type, size, and position."""
    eta = params.eta(n)
    logp = math.log(eta) - eta * (e.t - t_prev)
    if n == nv:
        logp += math.log1p(-tuning.w_stop)
    p_ins = _guided_p_ins(n, nv, params, tuning)
    if e.is_insertion:
        if p_ins <= 0:
            return NEG_INF
        logp += math.log(p_ins)
        logp += _guided_ins_size_logp(e.size, n, nv, params, tuning)
        logp -= math.log(n + 1)
    else:
        if p_ins >= 1:
            return NEG_INF
        logp += math.log1p(-p_ins)
        logp += _guided_del_size_logp(e.size, n, nv, params, tuning)
        logp -= math.log(n - e.size + 1)
    return logp


def guided_log_density(h: EdgeHistory, params: IndelParams, tuning: Tuning) -> float:
    """Exact log Q_g(h | v, n0, nv) for the guided kernel."""
    nv = h.n_child
    v = h.v

    def stop_logp(t: float) -> float:
        # terminate from a state with the target length: stop coin, or the
        # next waiting time overshoots the edge
        tail = math.exp(-params.eta(nv) * (v - t))
        return math.log(tuning.w_stop + (1.0 - tuning.w_stop) * tail)

    if not h.events:
        if h.n_parent != nv:
            return NEG_INF
        return stop_logp(0.0)
    logp = 0.0
    n = h.n_parent
    t_prev = 0.0
    for e in h.events[:-1]:
        logp += _guided_event_logp(e, n, nv, t_prev, params, tuning)
        if logp == NEG_INF:
            return NEG_INF
        n = e.n_after
        t_prev = e.t
    e = h.events[-1]
    gen = _guided_event_logp(e, n, nv, t_prev, params, tuning) + stop_logp(e.t)
    # repair route: no stop coin is armed at n != nv; the provisional run
    # overshoots and the forced event lands at a uniform time and position
    eta_k = params.eta(n)
    pos_count = (n + 1) if e.is_insertion else (n - e.size + 1)
    rep = -eta_k * (v - t_prev) - math.log(v - t_prev) - math.log(pos_count)
    return logp + np.logaddexp(gen, rep)


def propose_edge_history(
    n0: int, nv: int, v: float, params: IndelParams, tuning: Tuning, rng, guided: bool
) -> tuple[EdgeHistory, float]:
    if guided:
        return propose_edge_history_guided(n0, nv, v, params, tuning, rng)
    return propose_edge_history_basic(n0, nv, v, params, rng)


def edge_history_proposal_log_density(
    h: EdgeHistory, params: IndelParams, tuning: Tuning, guided: bool
) -> float:
    if guided:
        return guided_log_density(h, params, tuning)
    return basic_log_density(h, params)


# ---------------------------------------------------------------------------
# Branch length
# ---------------------------------------------------------------------------


def scale_edge_history(h: EdgeHistory, v_new: float) -> EdgeHistory:
    factor = v_new / h.v
    events = tuple(replace(e, t=e.t * factor) for e in h.events)
    return EdgeHistory(events, h.n_parent, h.n_child, v_new)


def propose_branch_length(
    eidx: int, tree: Tree, history: TreeHistory, tuning: Tuning, rng
) -> ProposalOutcome:
    """Multiplicative walk on one branch; event times scale along, so the
    alignment is untouched.  Jacobian (K+1) log(v'/v) covers the K times and
    the length coordinate; the symmetric draw cancels in the densities."""
    u = rng.uniform(-tuning.branch_delta, tuning.branch_delta)
    v_old = tree.lengths[eidx]
    v_new = v_old * math.exp(u)
    lengths = list(tree.lengths)
    lengths[eidx] = v_new
    new_tree = tree.with_lengths(tuple(lengths))
    h_old = history.edge_histories[eidx]
    hs = list(history.edge_histories)
    hs[eidx] = scale_edge_history(h_old, v_new)
    new_history = TreeHistory(history.root_length, tuple(hs))
    k = len(h_old.events)
    return ProposalOutcome(
        log_forward=0.0,
        log_reverse=0.0,
        log_jacobian=(k + 1) * u,
        tree=new_tree,
        history=new_history,
        alignment_changed=False,
    )


# ---------------------------------------------------------------------------
# Parameter blocks
# ---------------------------------------------------------------------------


def _reflect01(x: float) -> float:
    if x < 0:
        x = -x
    if x > 1:
        x = 2.0 - x
    return x


def propose_parameters(
    block: str,
    subst: SubstParams,
    indel: IndelParams,
    gamma: float,
    tuning: Tuning,
    rng,
) -> ProposalOutcome | None:
    """Random-walk updates for one parameter block.  Returns None when the
    draw leaves the domain (auto-reject)."""
    if block == "pi":
        conc = tuning.dirichlet_conc
        alpha_fwd = np.asarray(subst.pi) * conc
        pi_new = rng.dirichlet(alpha_fwd)
        if np.any(pi_new <= 0):
            return None
        pi_new = tuple(float(x) for x in pi_new / pi_new.sum())
        from .priors import dirichlet_log_pdf

        log_fwd = dirichlet_log_pdf(pi_new, tuple(alpha_fwd))
        log_rev = dirichlet_log_pdf(subst.pi, tuple(np.asarray(pi_new) * conc))
        if log_fwd == NEG_INF or log_rev == NEG_INF:
            return None
        return ProposalOutcome(log_fwd, log_rev, subst=SubstParams(subst.kappa, pi_new))
    if block in ("kappa", "gamma", "lambda"):
        u = rng.uniform(-tuning.param_delta, tuning.param_delta)
        if block == "kappa":
            return ProposalOutcome(
                0.0, 0.0, log_jacobian=u,
                subst=SubstParams(subst.kappa * math.exp(u), subst.pi),
            )
        if block == "gamma":
            return ProposalOutcome(0.0, 0.0, log_jacobian=u, gamma=gamma * math.exp(u))
        new = IndelParams(indel.r, indel.lam * math.exp(u), indel.deletion_sizes)
        return ProposalOutcome(0.0, 0.0, log_jacobian=u, indel=new)
    if block in ("r", "r_d"):
        u = rng.uniform(-tuning.unit_delta, tuning.unit_delta)
        if block == "r":
            r_new = _reflect01(indel.r + u)
            if not 0 < r_new < 1:
                return None
            return ProposalOutcome(
                0.0, 0.0, indel=IndelParams(r_new, indel.lam, indel.deletion_sizes)
            )
        if not isinstance(indel.deletion_sizes, GeometricSizes):
            return None
        rd_new = _reflect01(indel.deletion_sizes.r_d + u)
        if not 0 < rd_new < 1:
            return None
        return ProposalOutcome(
            0.0, 0.0, indel=IndelParams(indel.r, indel.lam, GeometricSizes(rd_new))
        )
    raise ValueError(f"unknown parameter block {block!r}")


# ---------------------------------------------------------------------------
# Internal node update
# ---------------------------------------------------------------------------


def _node_step_log_prob(m_from: int, m_to: int, step: int) -> float:
    """Walk on nonnegative integers: u uniform in {-step..step} (zero
    included so the identity length is proposable), reflected through zero.
    Exact point mass of m_from -> m_to."""
    hits = {m_to - m_from, -m_to - m_from}
    count = sum(1 for u in hits if -step <= u <= step)
    if count == 0:
        return NEG_INF
    return math.log(count) - math.log(2 * step + 1)


def _sample_node_step(m: int, step: int, rng) -> int:
    u = int(rng.integers(-step, step + 1))
    return abs(m + u)


def propose_node_update(
    node: int,
    tree: Tree,
    history: TreeHistory,
    params: IndelParams,
    tuning: Tuning,
    rng,
) -> ProposalOutcome:
    """Re-propose the sequence length at an internal node, fresh branch
    lengths on its three edges, and fresh guided histories against the fixed
    far-endpoint lengths."""
    lengths_at = node_lengths(history, tree)
    m_old = lengths_at[node]
    m_new = _sample_node_step(m_old, tuning.node_step, rng)
    log_fwd = _node_step_log_prob(m_old, m_new, tuning.node_step)
    log_rev = _node_step_log_prob(m_new, m_old, tuning.node_step)

    new_lengths = list(tree.lengths)
    hs = list(history.edge_histories)
    log_jac = 0.0
    for eidx, _ in tree.adjacency[node]:
        u = rng.uniform(-tuning.branch_delta, tuning.branch_delta)
        v_new = tree.lengths[eidx] * math.exp(u)
        new_lengths[eidx] = v_new
        log_jac += u
        parent, child = tree.edges[eidx]
        if parent == node:
            n0, nv = m_new, lengths_at[child]
        else:
            n0, nv = lengths_at[parent], m_new
        h_new, lq = propose_edge_history_guided(n0, nv, v_new, params, tuning, rng)
        log_fwd += lq
        log_rev += guided_log_density(history.edge_histories[eidx], params, tuning)
        hs[eidx] = h_new
    new_tree = tree.with_lengths(tuple(new_lengths))
    root_len = m_new if node == tree.history_root else history.root_length
    return ProposalOutcome(
        log_fwd,
        log_rev,
        log_jacobian=log_jac,
        tree=new_tree,
        history=TreeHistory(root_len, tuple(hs)),
        alignment_changed=True,
    )


# ---------------------------------------------------------------------------
# Subtree prune and regraft
# ---------------------------------------------------------------------------


def _subtree_nodes(tree: Tree, start: int, blocked: int) -> set[int]:
    seen = {start}
    queue = [start]
    while queue:
        node = queue.pop(0)
        for _, other in tree.adjacency[node]:
            if other == blocked or other in seen:
                continue
            seen.add(other)
            queue.append(other)
    return seen


def _prune_choices(tree: Tree) -> list[tuple[int, int, int]]:
    """(attachment w, subtree root s, edge index) for every directed edge
    whose attachment endpoint is internal; always 3n - 6 of them."""
    out = []
    for eidx, (a, b) in enumerate(tree.edges):
        if tree.is_internal(a):
            out.append((a, b, eidx))
        if tree.is_internal(b):
            out.append((b, a, eidx))
    return out


def _eligible_targets(
    tree: Tree, w: int, e_ws: int, sub: set[int]
) -> list[tuple[str, int]]:
    """Regraft targets in the remaining tree: surviving edges plus the merged
    edge created by removing w.  Excludes edges inside the pruned subtree."""
    out: list[tuple[str, int]] = []
    for eidx, (a, b) in enumerate(tree.edges):
        if eidx == e_ws or a == w or b == w:
            continue
        if a in sub or b in sub:
            continue
        out.append(("edge", eidx))
    out.append(("merged", -1))
    return out


def propose_spr(
    tree: Tree,
    history: TreeHistory,
    params: IndelParams,
    tuning: Tuning,
    rng,
) -> ProposalOutcome:
    """Prune a subtree at its attachment node, regraft onto a uniformly
    chosen eligible edge, re-propose the attachment node's length, and build
    fresh guided histories on every structurally affected edge.  Untouched
    edges keep their histories (time-reversed when their orientation to the
    history root flips)."""
    lengths_at = node_lengths(history, tree)
    choices = _prune_choices(tree)
    w, s, e_ws = choices[int(rng.integers(len(choices)))]
    sub = _subtree_nodes(tree, s, blocked=w)
    (ea, qa), (eb, qb) = [
        (eidx, other) for eidx, other in tree.adjacency[w] if eidx != e_ws
    ]
    merged_len = tree.lengths[ea] + tree.lengths[eb]

    targets = _eligible_targets(tree, w, e_ws, sub)
    kind, target_eidx = targets[int(rng.integers(len(targets)))]
    target_len = merged_len if kind == "merged" else tree.lengths[target_eidx]
    beta = rng.uniform(0.0, target_len)

    m_old = lengths_at[w]
    m_new = _sample_node_step(m_old, tuning.node_step, rng)
    log_fwd = (
        -math.log(len(choices)) - math.log(len(targets)) - math.log(target_len)
        + _node_step_log_prob(m_old, m_new, tuning.node_step)
    )
    log_rev_discrete = (
        -math.log(len(choices)) - math.log(merged_len)
        + _node_step_log_prob(m_new, m_old, tuning.node_step)
    )

    # assemble the new undirected link list; surviving edges keep their order
    removed = {ea, eb}
    if kind == "edge":
        removed.add(target_eidx)
    links: list[tuple[int, int]] = []
    lens: list[float] = []
    provenance: list[int | None] = []  # old edge index for surviving edges
    for eidx, (a, b) in enumerate(tree.edges):
        if eidx in removed:
            continue
        links.append((a, b))
        lens.append(tree.lengths[eidx])
        provenance.append(eidx)
    if kind == "edge":
        c, d = tree.edges[target_eidx]
        new_edges = [(qa, qb, merged_len), (c, w, beta), (w, d, target_len - beta)]
    else:
        new_edges = [(qa, w, beta), (w, qb, merged_len - beta)]
    for a, b, L in new_edges:
        links.append((a, b))
        lens.append(L)
        provenance.append(None)

    new_tree = tree_from_links(tree.taxa, links, lens, history_root=tree.history_root)

    new_lengths_at = list(lengths_at)
    new_lengths_at[w] = m_new
    hs: list[EdgeHistory | None] = [None] * len(new_tree.edges)
    for new_idx in new_tree.preorder_edges:
        parent, child = new_tree.edges[new_idx]
        old_idx = provenance[new_idx]
        if old_idx is not None and old_idx != e_ws:
            h_old = history.edge_histories[old_idx]
            if tree.edges[old_idx] == (parent, child):
                hs[new_idx] = h_old
            else:
                hs[new_idx] = reverse_edge_history(h_old)
        else:
            n0, nv = new_lengths_at[parent], new_lengths_at[child]
            h_new, lq = propose_edge_history_guided(
                n0, nv, new_tree.lengths[new_idx], params, tuning, rng
            )
            log_fwd += lq
            hs[new_idx] = h_new

    # reverse move: regenerate the old histories that the forward move threw
    # away, conditioned as they stood in the old tree
    regenerated_old = [e_ws, ea, eb] + ([target_eidx] if kind == "edge" else [])
    log_rev = log_rev_discrete
    for old_idx in regenerated_old:
        log_rev += guided_log_density(history.edge_histories[old_idx], params, tuning)
    # eligible-count term of the reverse move, computed on the new tree
    new_sub = _subtree_nodes(new_tree, s, blocked=w)
    new_e_ws = next(
        eidx for eidx, (a, b) in enumerate(new_tree.edges)
        if {a, b} == {w, s}
    )
    rev_targets = _eligible_targets(new_tree, w, new_e_ws, new_sub)
    log_rev -= math.log(len(rev_targets))

    root_len = m_new if w == new_tree.history_root else history.root_length
    new_history = TreeHistory(root_len, tuple(hs))
    return ProposalOutcome(
        log_fwd,
        log_rev,
        tree=new_tree,
        history=new_history,
        alignment_changed=True,
    )
