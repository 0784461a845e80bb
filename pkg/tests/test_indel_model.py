import math

import numpy as np
import pytest

from indelphy.indel import (
    GeometricSizes,
    IndelParams,
    NegativeBinomialSizes,
    PowerLawSizes,
    deletion_position_mass,
    edge_history_log_density,
    equilibrium_length_log_pmf,
    insertion_size_log_pmf,
    rate_ratio,
    tree_history_log_density,
)
from indelphy.priors import PriorConfig
from indelphy.simulate import simulate_dataset, simulate_edge_history
from indelphy.types import (
    EdgeHistory,
    IndelEvent,
    INSERTION,
    TreeHistory,
    rerooted_history,
    reverse_edge_history,
    tree_from_links,
)


def geometric_params(r=0.1, r_d=0.5, lam=0.1):
    return IndelParams(r, lam, GeometricSizes(r_d))


class TestEquilibriumLength:
    def test_zero(self):
        assert equilibrium_length_log_pmf(0, 0.5) == pytest.approx(math.log(0.5))

    def test_two(self):
        assert equilibrium_length_log_pmf(2, 0.5) == pytest.approx(math.log(0.125))

    def test_long_sequence_regime(self):
        r = 100 / 12300
        expected = math.log(r) + 120 * math.log1p(-r)
        got = equilibrium_length_log_pmf(120, r)
        assert np.isfinite(got) and got < 0
        assert got == pytest.approx(expected, rel=1e-14)

    def test_domain(self):
        with pytest.raises(ValueError):
            equilibrium_length_log_pmf(3, 1.5)


class TestRateRatio:
    def test_geometric_closed_form_vs_partial_sum(self):
        r, r_d = 0.1, 0.5
        got = rate_ratio(r, GeometricSizes(r_d))
        assert got == pytest.approx(0.45 / 0.55, abs=1e-15)
        partial = sum(
            (1 - r) ** k * r_d * (1 - r_d) ** (k - 1) for k in range(1, 10_001)
        )
        assert got == pytest.approx(partial, abs=1e-13)

    def test_vanishes_as_r_to_one(self):
        assert rate_ratio(1 - 1e-9, GeometricSizes(0.5)) < 1e-8

    def test_tkf_limit(self):
        # d concentrated on single bases: ratio is exactly 1 - r
        for r in (0.05, 0.3, 0.9):
            assert rate_ratio(r, GeometricSizes(1.0)) == pytest.approx(1 - r, abs=1e-15)

    def test_closed_form_matches_series_on_grid(self):
        for r in np.linspace(0.02, 0.95, 20):
            for r_d in np.linspace(0.05, 0.95, 20):
                closed = rate_ratio(float(r), GeometricSizes(float(r_d)))
                r_i = 1 - (1 - r_d) * (1 - r)
                alt = r_d * (1 - r_i) / (r_i * (1 - r_d))
                assert closed == pytest.approx(alt, abs=1e-12)

    def test_always_below_one(self):
        rng = np.random.default_rng(1)
        dists = [
            GeometricSizes(0.3),
            NegativeBinomialSizes(2.5, 0.4),
            PowerLawSizes(2.0, 40),
        ]
        for _ in range(50):
            r = float(rng.uniform(0.01, 0.99))
            for d in dists:
                assert 0 < rate_ratio(r, d) < 1


class TestInsertionSizes:
    def test_single_base(self):
        # r=0.1, r_d=0.5 gives r_i=0.55; the generic formula must agree
        got = insertion_size_log_pmf(1, 0.1, GeometricSizes(0.5), 0.1, 0.1 / (0.45 / 0.55))
        assert got == pytest.approx(math.log(0.55), abs=1e-12)

    def test_two_bases(self):
        params = geometric_params()
        assert params.insertion_log_pmf(2) == pytest.approx(
            math.log(0.55 * 0.45), abs=1e-12
        )

    def test_tkf_point_mass(self):
        params = IndelParams(0.3, 0.2, GeometricSizes(1.0))
        assert params.insertion_log_pmf(1) == pytest.approx(0.0, abs=1e-12)
        assert params.insertion_log_pmf(2) == -math.inf

    @pytest.mark.parametrize(
        "dist",
        [GeometricSizes(0.4), NegativeBinomialSizes(1.7, 0.35), PowerLawSizes(1.8, 60)],
    )
    @pytest.mark.parametrize("r", [0.05, 0.3, 0.7])
    def test_insertion_law_normalized(self, dist, r):
        params = IndelParams(r, 0.2, dist)
        total = sum(math.exp(params.insertion_log_pmf(k)) for k in range(1, 4000))
        assert total == pytest.approx(1.0, abs=1e-10)


class TestDeletionMass:
    def test_values_against_direct_summation(self):
        params = geometric_params()
        d = params.deletion_sizes

        def direct(x):
            return sum((x - k + 1) * d.pmf(k) for k in range(1, x + 1))

        assert deletion_position_mass(1, params) == pytest.approx(0.5)
        assert deletion_position_mass(3, params) == pytest.approx(2.125)
        assert deletion_position_mass(10, params) == pytest.approx(9.0009765625)
        for x in range(0, 40):
            assert deletion_position_mass(x, params) == pytest.approx(
                direct(x), abs=1e-12
            )

    def test_telescoping_identity(self):
        for dist in (GeometricSizes(0.25), NegativeBinomialSizes(2.0, 0.5), PowerLawSizes(2.2, 30)):
            params = IndelParams(0.2, 0.1, dist)
            for x in range(0, 60):
                lhs = params.f(x + 1) - params.f(x)
                rhs = sum(dist.pmf(k) for k in range(1, x + 2))
                assert lhs == pytest.approx(rhs, abs=1e-12)


class TestEventRate:
    def test_insertions_only_at_zero_length(self):
        params = geometric_params(lam=0.1)
        assert params.eta(0) == pytest.approx(0.1)

    def test_reference_value(self):
        params = geometric_params()
        mu = 0.1 / (0.45 / 0.55)
        assert params.f(5) == pytest.approx(4.03125)
        assert params.eta(5) == pytest.approx(0.6 + 4.03125 * mu)
        assert params.eta(5) == pytest.approx(1.0927083333333333, abs=1e-10)

    def test_mu_exceeds_lambda(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            params = IndelParams(
                float(rng.uniform(0.01, 0.99)),
                float(rng.uniform(0.01, 2.0)),
                GeometricSizes(float(rng.uniform(0.05, 1.0))),
            )
            assert params.mu > params.lam


class TestEdgeDensity:
    def test_empty_history(self):
        params = geometric_params()
        h = EdgeHistory((), 5, 5, 0.2)
        got = edge_history_log_density(h, params)
        assert got == pytest.approx(-params.eta(5) * 0.2)
        assert got == pytest.approx(-0.2185416666666667, abs=1e-9)
        assert math.exp(got) == pytest.approx(0.8037, abs=1e-4)

    def test_zero_length_edge(self):
        params = geometric_params()
        assert edge_history_log_density(EdgeHistory((), 5, 5, 0.0), params) == 0.0

    def test_single_insertion_assembles_from_components(self):
        params = geometric_params()
        v = 0.4
        h = EdgeHistory((IndelEvent(v / 2, INSERTION, 2, 1, 6),), 5, 6, v)
        expected = (
            -params.eta(5) * (v / 2)
            - params.eta(6) * (v / 2)
            + math.log(params.lam)
            + params.insertion_log_pmf(1)
        )
        assert edge_history_log_density(h, params) == pytest.approx(expected)

    def test_invalid_history_rejected(self):
        params = geometric_params()
        with pytest.raises(ValueError):
            edge_history_log_density(EdgeHistory((), 5, 6, 0.2), params)

    def test_density_matches_monte_carlo_event_fractions(self):
        # frequency of the one-insertion-of-size-1 outcome in a small time bin
        # estimates the density integral over that bin
        params = geometric_params(r=0.3, r_d=0.5, lam=0.5)
        rng = np.random.default_rng(4)
        v = 0.3
        n0 = 2
        n_draws = 200_000
        bins = 6
        counts = np.zeros(bins)
        for _ in range(n_draws):
            h = simulate_edge_history(n0, v, params, rng)
            if len(h.events) == 1 and h.events[0].is_insertion and h.events[0].size == 1:
                b = int(h.events[0].t / v * bins)
                counts[min(b, bins - 1)] += 1
        # compare each bin against the midpoint density x bin width x position
        # choices (density already sums over positions)
        for b in range(bins):
            t_mid = (b + 0.5) * v / bins
            h = EdgeHistory((IndelEvent(t_mid, INSERTION, 0, 1, n0 + 1),), n0, n0 + 1, v)
            # all n0+1 positions pool into the same (K=1, size=1) count
            dens = math.exp(edge_history_log_density(h, params)) * (n0 + 1)
            expected = dens * v / bins
            p_hat = counts[b] / n_draws
            se = math.sqrt(expected * (1 - expected) / n_draws)
            assert abs(p_hat - expected) < 4 * se


class TestDetailedBalance:
    def test_reverse_history_identity(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(2000):
            r = float(rng.choice([0.05, 0.5]))
            r_d = float(rng.choice([0.3, 0.9]))
            params = IndelParams(r, float(rng.uniform(0.05, 0.5)), GeometricSizes(r_d))
            n0 = int(rng.geometric(r)) - 1
            h = simulate_edge_history(n0, float(rng.uniform(0.05, 1.5)), params, rng)
            lhs = equilibrium_length_log_pmf(h.n_parent, r) + edge_history_log_density(
                h, params
            )
            rhs = equilibrium_length_log_pmf(h.n_child, r) + edge_history_log_density(
                reverse_edge_history(h), params
            )
            worst = max(worst, abs(lhs - rhs))
        assert worst < 1e-9


class TestTreeDensity:
    def test_eventless_tree(self):
        params = geometric_params()
        taxa = ("a", "b", "c")
        tree = tree_from_links(taxa, [(0, 3), (1, 3), (2, 3)], [0.1, 0.2, 0.3])
        L = 6
        hs = tuple(EdgeHistory((), L, L, v) for v in tree.lengths)
        got = tree_history_log_density(TreeHistory(L, hs), tree, params)
        expected = equilibrium_length_log_pmf(L, params.r) - params.eta(L) * sum(
            tree.lengths
        )
        assert got == pytest.approx(expected)

    def test_root_choice_invariance(self):
        rng = np.random.default_rng(5)
        cfg = PriorConfig(alpha_gamma=0.1, alpha_r=10, beta_r=90)
        for _ in range(20):
            data = simulate_dataset(5, cfg, rng)
            base = tree_history_log_density(data.history, data.tree, data.indel)
            assert np.isfinite(base)
            for root in range(5, data.tree.n_nodes):
                t2 = data.tree.with_history_root(root)
                h2 = rerooted_history(data.history, data.tree, t2)
                v2 = tree_history_log_density(h2, t2, data.indel)
                assert abs(v2 - base) < 1e-9
