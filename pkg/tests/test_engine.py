import math

import numpy as np
import pytest

from indelphy.config import RunConfig
from indelphy.engine import (
    ChainState,
    Dataset,
    acceptance_log_ratio,
    audit_state,
    full_state,
    initial_state,
    mcmc_step,
    run_chain,
)
from indelphy.priors import PriorConfig
from indelphy.proposals import ProposalOutcome
from indelphy.simulate import simulate_dataset
from indelphy.types import Sequence, topology_key, validate_tree_history


def small_config(**kw):
    prior = kw.pop(
        "prior",
        PriorConfig(alpha_gamma=0.2, alpha_r=10, beta_r=90, alpha_lambda=5),
    )
    return RunConfig(prior=prior, **kw)


@pytest.fixture(scope="module")
def sim_data():
    cfg = small_config()
    rng = np.random.default_rng(0)
    return Dataset(simulate_dataset(4, cfg.prior, rng).sequences)


class TestStateAssembly:
    def test_posterior_is_sum_of_terms(self, sim_data):
        cfg = small_config()
        state = initial_state(sim_data, cfg, np.random.default_rng(1))
        assert np.isfinite(state.log_posterior)
        assert state.log_posterior == pytest.approx(
            state.log_like
            + state.log_root_q
            + sum(state.edge_logdens)
            + state.log_prior
        )

    def test_identity_proposal_accepts_with_probability_one(self, sim_data):
        cfg = small_config()
        state = initial_state(sim_data, cfg, np.random.default_rng(2))
        outcome = ProposalOutcome(log_forward=0.0, log_reverse=0.0)
        assert acceptance_log_ratio(state, state, outcome) == 0.0

    def test_initial_history_matches_leaf_lengths(self, sim_data):
        cfg = small_config()
        for seed in range(5):
            state = initial_state(sim_data, cfg, np.random.default_rng(seed))
            assert (
                validate_tree_history(
                    state.history, state.tree, sim_data.lengths
                )
                is None
            )


class TestCacheConsistency:
    def test_cache_equals_recompute_after_many_steps(self, sim_data):
        cfg = small_config(iters=1, thin=1)
        rng = np.random.default_rng(3)
        state = initial_state(sim_data, cfg, rng)
        for _ in range(3000):
            state = mcmc_step(state, sim_data, cfg, rng)
        assert audit_state(state, sim_data, cfg) < 1e-8

    def test_audit_runs_inside_chain(self, sim_data):
        cfg = small_config(iters=500, thin=100, audit_every=100)
        run_chain(sim_data, cfg, np.random.default_rng(4))


class TestDeterminism:
    def test_same_seed_same_samples(self, sim_data):
        cfg = small_config(iters=800, thin=50)
        r1 = run_chain(sim_data, cfg, np.random.default_rng(5))
        r2 = run_chain(sim_data, cfg, np.random.default_rng(5))
        assert len(r1.samples) == len(r2.samples) == 16
        for a, b in zip(r1.samples, r2.samples):
            assert a == b

    def test_different_seeds_differ(self, sim_data):
        cfg = small_config(iters=800, thin=50)
        r1 = run_chain(sim_data, cfg, np.random.default_rng(5))
        r2 = run_chain(sim_data, cfg, np.random.default_rng(6))
        assert any(a != b for a, b in zip(r1.samples, r2.samples))


class TestAcceptanceRates:
    def test_every_kernel_accepts_and_rejects(self, sim_data):
        cfg = small_config(iters=6000, thin=200)
        result = run_chain(sim_data, cfg, np.random.default_rng(7))
        for cat in ("branch", "edge", "node", "spr", "params"):
            assert result.stats.proposed[cat] > 0
            rate = result.stats.rate(cat)
            assert 0.0 < rate < 1.0, f"{cat} acceptance rate {rate}"

    def test_three_taxon_runs_without_spr(self):
        cfg = small_config(iters=1000, thin=100)
        rng = np.random.default_rng(8)
        data = Dataset(simulate_dataset(3, cfg.prior, rng).sequences)
        result = run_chain(data, cfg, rng)
        assert result.stats.proposed["spr"] == 0


class TestPriorOnlyTarget:
    def test_topology_marginal_is_uniform(self):
        # equal-length dummy sequences plus a switched-off likelihood leave
        # the topology marginal exactly uniform by label symmetry
        data = Dataset([Sequence(n, "ACGT" * 3) for n in ("a", "b", "c", "d", "e")])
        cfg = small_config(iters=60_000, thin=20, prior_only=True)
        result = run_chain(data, cfg, np.random.default_rng(9))
        keys = [topology_key(s.tree) for s in result.samples]
        counts = {}
        for k in keys:
            counts[k] = counts.get(k, 0) + 1
        assert len(counts) == 15
        # batch-means standard error to absorb autocorrelation
        n_batches = 20
        batch = len(keys) // n_batches
        freqs = {k: [] for k in counts}
        for b in range(n_batches):
            chunk = keys[b * batch : (b + 1) * batch]
            for k in freqs:
                freqs[k].append(sum(1 for x in chunk if x == k) / len(chunk))
        for k, fs in freqs.items():
            fs = np.array(fs)
            se = fs.std(ddof=1) / math.sqrt(n_batches)
            assert abs(fs.mean() - 1 / 15) < 4 * se, (fs.mean(), se)

    def test_prior_only_state_has_zero_likelihood_term(self):
        data = Dataset([Sequence(n, "ACGT") for n in ("a", "b", "c")])
        cfg = small_config(iters=10, thin=10, prior_only=True)
        result = run_chain(data, cfg, np.random.default_rng(10))
        assert result.final_state.log_like == 0.0
        assert result.final_state.cols is None
