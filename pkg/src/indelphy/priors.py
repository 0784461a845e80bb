"""Prior log-densities and prior samplers for every parameter block.

Blocks: tree topology (uniform over unrooted bifurcating shapes), branch
lengths (iid exponential with rate gamma), gamma and kappa (heavy-tailed
ratio-of-exponentials densities), pi (Dirichlet), r and r_d (beta), and
lambda (exponential).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .hky import SubstParams
from .indel import GeometricSizes, IndelParams
from .types import Tree, tree_from_links

NEG_INF = float("-inf")


@dataclass(frozen=True)
class PriorConfig:
    alpha_gamma: float = 10.0
    alpha_kappa: float = 1.0
    alpha_pi: tuple[float, float, float, float] = (13.3, 21.7, 23.1, 11.9)
    alpha_r: float = 100.0
    beta_r: float = 12200.0
    alpha_rd: float = 3.0
    beta_rd: float = 15.0
    alpha_lambda: float = 10.0

    def __post_init__(self):
        vals = [
            self.alpha_gamma, self.alpha_kappa, self.alpha_r, self.beta_r,
            self.alpha_rd, self.beta_rd, self.alpha_lambda, *self.alpha_pi,
        ]
        if any(v <= 0 for v in vals):
            raise ValueError("all hyperparameters must be positive")


def number_of_topologies(n: int) -> int:
    """(2n - 5)!! unrooted bifurcating shapes on n labeled leaves."""
    out = 1
    for k in range(3, 2 * n - 4, 2):
        out *= k
    return out


def ratio_exp_log_pdf(x: float, alpha: float) -> float:
    """Density alpha / (1 + alpha x)^2 on x > 0 (ratio of iid exponentials,
    scaled); infinite mean, median 1/alpha."""
    if x <= 0:
        return NEG_INF
    return math.log(alpha) - 2.0 * math.log1p(alpha * x)


def ratio_exp_sample(alpha: float, rng) -> float:
    # 1 / (1 + alpha x) is uniform on (0, 1)
    u = rng.random()
    return (1.0 / u - 1.0) / alpha


def beta_log_pdf(x: float, a: float, b: float) -> float:
    if not 0 < x < 1:
        return NEG_INF
    return (
        (a - 1) * math.log(x)
        + (b - 1) * math.log1p(-x)
        + math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
    )


def dirichlet_log_pdf(x, alpha) -> float:
    if any(xi <= 0 for xi in x) or abs(sum(x) - 1.0) > 1e-9:
        return NEG_INF
    out = math.lgamma(sum(alpha))
    for xi, ai in zip(x, alpha):
        out += (ai - 1) * math.log(xi) - math.lgamma(ai)
    return out


def exponential_log_pdf(x: float, rate: float) -> float:
    if x <= 0:
        return NEG_INF
    return math.log(rate) - rate * x


def log_prior(
    tree: Tree,
    gamma: float,
    subst: SubstParams,
    indel: IndelParams,
    cfg: PriorConfig,
) -> float:
    """Joint log prior over (topology, branch lengths, gamma, pi, kappa,
    r, r_d, lambda).  Out-of-domain parameters give -inf."""
    if gamma <= 0:
        return NEG_INF
    out = -math.log(number_of_topologies(tree.n_taxa))
    for v in tree.lengths:
        out += exponential_log_pdf(v, gamma)
    out += ratio_exp_log_pdf(gamma, cfg.alpha_gamma)
    out += dirichlet_log_pdf(subst.pi, cfg.alpha_pi)
    out += ratio_exp_log_pdf(subst.kappa, cfg.alpha_kappa)
    out += beta_log_pdf(indel.r, cfg.alpha_r, cfg.beta_r)
    if isinstance(indel.deletion_sizes, GeometricSizes):
        out += beta_log_pdf(indel.deletion_sizes.r_d, cfg.alpha_rd, cfg.beta_rd)
    else:
        raise ValueError("priors are defined for the geometric deletion-size law")
    out += exponential_log_pdf(indel.lam, cfg.alpha_lambda)
    return out


def sample_topology_links(n: int, rng) -> list[tuple[int, int]]:
    """Uniform unrooted bifurcating topology by sequential random attachment.

    With leaves added in a fixed order and the attachment edge uniform at
    each step, every shape arises from exactly one choice sequence, so the
    result is uniform over the (2n-5)!! shapes.
    """
    links = [(0, n), (1, n), (2, n)]
    next_internal = n + 1
    for leaf in range(3, n):
        e = int(rng.integers(len(links)))
        a, b = links[e]
        w = next_internal
        next_internal += 1
        links[e] = (a, w)
        links.append((w, b))
        links.append((leaf, w))
    return links


def sample_tree(taxa: tuple[str, ...], gamma: float, rng) -> Tree:
    """Topology uniform; branch lengths iid exponential with rate gamma."""
    n = len(taxa)
    links = sample_topology_links(n, rng)
    lengths = [float(rng.exponential(1.0 / gamma)) for _ in range(len(links))]
    return tree_from_links(tuple(taxa), links, lengths)


@dataclass(frozen=True)
class PriorDraw:
    tree: Tree
    gamma: float
    subst: SubstParams
    indel: IndelParams


def sample_prior(rng, cfg: PriorConfig, taxa: tuple[str, ...]) -> PriorDraw:
    """One draw of every parameter block plus a tree."""
    gamma = ratio_exp_sample(cfg.alpha_gamma, rng)
    kappa = ratio_exp_sample(cfg.alpha_kappa, rng)
    pi = tuple(rng.dirichlet(cfg.alpha_pi))
    r = float(rng.beta(cfg.alpha_r, cfg.beta_r))
    r_d = float(rng.beta(cfg.alpha_rd, cfg.beta_rd))
    lam = float(rng.exponential(1.0 / cfg.alpha_lambda))
    tree = sample_tree(taxa, gamma, rng)
    return PriorDraw(
        tree=tree,
        gamma=gamma,
        subst=SubstParams(kappa, pi),
        indel=IndelParams(r, lam, GeometricSizes(r_d)),
    )
