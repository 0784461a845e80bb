"""Evaluation of the indel process: fragment-size laws, derived rates, the
position-summed deletion mass f, total event intensity, and exact
log-densities of edge and tree histories.

The model is parameterized by the equilibrium-length parameter r in (0,1),
the base deletion-size distribution d(.) with d(1) > 0, and the total
insertion rate lambda.  Everything else is derived: the rate ratio
lambda/mu = sum_k (1-r)^k d(k), the deletion rate mu, and the insertion-size
law i(k) = (mu/lambda)(1-r)^k d(k).  All densities are computed in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .types import EdgeHistory, Tree, TreeHistory, node_lengths, validate_edge_history

NEG_INF = float("-inf")

MAX_SERIES_TERMS = 10**6


class SeriesError(RuntimeError):
    """A truncated series failed to reach its tail tolerance."""


@dataclass(frozen=True)
class GeometricSizes:
    """d(k) = r_d (1 - r_d)^(k-1) on {1, 2, ...}.  r_d = 1 gives the
    single-base point mass."""

    r_d: float

    def __post_init__(self):
        if not 0 < self.r_d <= 1:
            raise ValueError("r_d must be in (0, 1]")

    kind = "geometric"

    def pmf(self, k: int) -> float:
        if k < 1:
            return 0.0
        return self.r_d * (1.0 - self.r_d) ** (k - 1)

    def log_pmf(self, k: int) -> float:
        if k < 1:
            return NEG_INF
        if self.r_d == 1.0:
            return 0.0 if k == 1 else NEG_INF
        return math.log(self.r_d) + (k - 1) * math.log1p(-self.r_d)

    def sample(self, rng) -> int:
        return int(rng.geometric(self.r_d))


@dataclass(frozen=True)
class NegativeBinomialSizes:
    """Negative binomial shifted to {1, 2, ...}: d(k) = NB(k - 1; shape, prob)."""

    shape: float
    prob: float

    def __post_init__(self):
        if self.shape <= 0 or not 0 < self.prob < 1:
            raise ValueError("need shape > 0 and prob in (0, 1)")

    kind = "negative_binomial"

    def log_pmf(self, k: int) -> float:
        if k < 1:
            return NEG_INF
        x = k - 1
        return (
            math.lgamma(x + self.shape)
            - math.lgamma(self.shape)
            - math.lgamma(x + 1)
            + self.shape * math.log(self.prob)
            + x * math.log1p(-self.prob)
        )

    def pmf(self, k: int) -> float:
        lp = self.log_pmf(k)
        return math.exp(lp) if lp > NEG_INF else 0.0

    def sample(self, rng) -> int:
        return int(rng.negative_binomial(self.shape, self.prob)) + 1


@dataclass(frozen=True)
class PowerLawSizes:
    """d(k) proportional to k^(-exponent) on {1, ..., cutoff}."""

    exponent: float
    cutoff: int

    def __post_init__(self):
        if self.exponent <= 0 or self.cutoff < 1:
            raise ValueError("need exponent > 0 and cutoff >= 1")

    kind = "power_law"

    @cached_property
    def _weights(self) -> np.ndarray:
        w = np.arange(1, self.cutoff + 1, dtype=float) ** (-self.exponent)
        return w / w.sum()

    @cached_property
    def _cumulative(self) -> np.ndarray:
        return np.cumsum(self._weights)

    def pmf(self, k: int) -> float:
        if not 1 <= k <= self.cutoff:
            return 0.0
        return float(self._weights[k - 1])

    def log_pmf(self, k: int) -> float:
        p = self.pmf(k)
        return math.log(p) if p > 0 else NEG_INF

    def sample(self, rng) -> int:
        return int(np.searchsorted(self._cumulative, rng.random())) + 1


SizeDistribution = GeometricSizes | NegativeBinomialSizes | PowerLawSizes


def equilibrium_length_log_pmf(x: int, r: float) -> float:
    """log q(x) for the stationary length law q(x) = r (1 - r)^x, x >= 0."""
    if not 0 < r < 1:
        raise ValueError("r must be in (0, 1)")
    if x < 0:
        return NEG_INF
    return math.log(r) + x * math.log1p(-r)


def rate_ratio(r: float, d: SizeDistribution, eps_tail: float = 1e-12) -> float:
    """lambda/mu = sum_{k>=1} (1-r)^k d(k), in (0, 1).

    Closed form for geometric d; otherwise the series is truncated once the
    geometric envelope bounds the remaining tail below eps_tail.
    """
    if not 0 < r < 1:
        raise ValueError("r must be in (0, 1)")
    if isinstance(d, GeometricSizes):
        r_i = 1.0 - (1.0 - d.r_d) * (1.0 - r)
        return d.r_d * (1.0 - r) / r_i
    total = 0.0
    q = 1.0 - r
    for k in range(1, MAX_SERIES_TERMS + 1):
        total += q**k * d.pmf(k)
        # remaining tail <= sum_{j>k} q^j = q^(k+1) / r
        if q ** (k + 1) / r < eps_tail:
            return total
    raise SeriesError("rate ratio series did not converge within 1e6 terms")


def insertion_size_log_pmf(
    k: int, r: float, d: SizeDistribution, lam: float, mu: float
) -> float:
    """log i(k) with i(k) = (mu/lambda) (1-r)^k d(k)."""
    ld = d.log_pmf(k)
    if ld == NEG_INF:
        return NEG_INF
    return math.log(mu / lam) + k * math.log1p(-r) + ld


@dataclass(frozen=True)
class IndelParams:
    """Free parameters (r, d, lambda) plus derived quantities and caches.

    The f(x) values and per-length deletion sampling tables are memoized;
    caches are append-only and safe for single-writer use within one chain.
    """

    r: float
    lam: float
    deletion_sizes: SizeDistribution

    def __post_init__(self):
        if not 0 < self.r < 1:
            raise ValueError("r must be in (0, 1)")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.deletion_sizes.pmf(1) <= 0:
            raise ValueError("deletion size law must have d(1) > 0")
        object.__setattr__(self, "_f", [0.0])
        object.__setattr__(self, "_cdf", [0.0])
        object.__setattr__(self, "_del_tables", {})

    @cached_property
    def ratio(self) -> float:
        return rate_ratio(self.r, self.deletion_sizes)

    @cached_property
    def mu(self) -> float:
        return self.lam / self.ratio

    @cached_property
    def r_i(self) -> float:
        """Insertion-size geometric parameter; defined for geometric d."""
        if not isinstance(self.deletion_sizes, GeometricSizes):
            raise AttributeError("r_i is defined only for geometric deletion sizes")
        return 1.0 - (1.0 - self.deletion_sizes.r_d) * (1.0 - self.r)

    def insertion_log_pmf(self, k: int) -> float:
        return insertion_size_log_pmf(k, self.r, self.deletion_sizes, self.lam, self.mu)

    def sample_insertion_size(self, rng) -> int:
        if isinstance(self.deletion_sizes, GeometricSizes):
            if self.deletion_sizes.r_d == 1.0:
                return 1
            return int(rng.geometric(self.r_i))
        u = rng.random()
        acc = 0.0
        for k in range(1, MAX_SERIES_TERMS + 1):
            acc += math.exp(self.insertion_log_pmf(k))
            if u < acc:
                return k
        raise SeriesError("insertion size sampling exceeded 1e6 terms")

    def f(self, x: int) -> float:
        """Position-summed deletion mass f(x) = sum_{k=1..x} (x-k+1) d(k)."""
        if x < 0:
            raise ValueError("length must be nonnegative")
        fs: list[float] = self._f  # type: ignore[attr-defined]
        cdf: list[float] = self._cdf  # type: ignore[attr-defined]
        while len(fs) <= x:
            m = len(fs)  # computing f(m) from f(m-1)
            cdf.append(cdf[-1] + self.deletion_sizes.pmf(m))
            fs.append(fs[-1] + cdf[m])
        return fs[x]

    def eta(self, n: int) -> float:
        """Total indel intensity on a length-n sequence: (n+1) lambda + f(n) mu."""
        return (n + 1) * self.lam + self.f(n) * self.mu

    def deletion_cumweights(self, n: int) -> np.ndarray:
        """Cumulative weights of (n-l+1) d(l) for l = 1..n, normalized."""
        table = self._del_tables.get(n)  # type: ignore[attr-defined]
        if table is None:
            sizes = np.arange(1, n + 1)
            w = (n - sizes + 1) * np.array(
                [self.deletion_sizes.pmf(int(l)) for l in sizes]
            )
            table = np.cumsum(w)
            table /= table[-1]
            self._del_tables[n] = table  # type: ignore[attr-defined]
        return table

    def sample_deletion(self, n: int, rng) -> tuple[int, int]:
        """Joint (position, size) draw with P(p, l) = d(l) / f(n)."""
        cum = self.deletion_cumweights(n)
        size = int(np.searchsorted(cum, rng.random())) + 1
        pos = int(rng.integers(n - size + 1))
        return pos, size


def total_event_rate(n: int, params: IndelParams) -> float:
    return params.eta(n)


def deletion_position_mass(x: int, params: IndelParams) -> float:
    return params.f(x)


def edge_history_log_density(h: EdgeHistory, params: IndelParams) -> float:
    """Exact log-density of a single-edge history given (v, n_parent).

    Sum of exponential-holding terms -eta_j (t_j - t_{j-1}) over the K+1
    inter-event intervals plus log(lambda i(l)) or log(mu d(l)) per event.
    """
    viol = validate_edge_history(h)
    if viol is not None:
        raise ValueError(f"invalid edge history: {viol.reason}")
    log_lam = math.log(params.lam)
    log_mu = math.log(params.mu)
    n = h.n_parent
    t_prev = 0.0
    logp = 0.0
    for e in h.events:
        logp -= params.eta(n) * (e.t - t_prev)
        if e.is_insertion:
            lp = params.insertion_log_pmf(e.size)
            if lp == NEG_INF:
                return NEG_INF
            logp += log_lam + lp
        else:
            ld = params.deletion_sizes.log_pmf(e.size)
            if ld == NEG_INF:
                return NEG_INF
            logp += log_mu + ld
        n = e.n_after
        t_prev = e.t
    logp -= params.eta(n) * (h.v - t_prev)
    return logp


def tree_history_log_density(
    history: TreeHistory, tree: Tree, params: IndelParams
) -> float:
    """log q(root length) plus the sum of per-edge history log-densities."""
    node_lengths(history, tree)  # raises on inconsistent lengths
    logp = equilibrium_length_log_pmf(history.root_length, params.r)
    for h in history.edge_histories:
        logp += edge_history_log_density(h, params)
    return logp
