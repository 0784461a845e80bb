import numpy as np
import pytest

from indelphy.config import (
    RunConfig,
    config_from_dict,
    config_hash,
    config_to_dict,
    format_config,
    parse_config,
)
from indelphy.engine import ChainSample, Dataset, run_chain
from indelphy.io import (
    ParseError,
    canonicalize,
    format_sample,
    log_header,
    parse_fasta,
    parse_history,
    parse_newick,
    parse_sample_log,
    serialize_history,
    write_fasta,
    write_newick,
)
from indelphy.priors import PriorConfig, sample_prior
from indelphy.simulate import simulate_dataset
from indelphy.types import Sequence


class TestFasta:
    def test_basic(self):
        seqs = parse_fasta(">a\nACGT\n>b\nAC\n")
        assert [(s.name, s.bases) for s in seqs] == [("a", "ACGT"), ("b", "AC")]

    def test_lowercase_normalized(self):
        seqs = parse_fasta(">a\nacgt\n")
        assert seqs[0].bases == "ACGT"

    def test_multiline_concatenated(self):
        seqs = parse_fasta(">a desc ignored\nAC\nGT\n")
        assert seqs[0].name == "a"
        assert seqs[0].bases == "ACGT"

    def test_duplicate_names_rejected(self):
        with pytest.raises(ParseError, match="duplicate"):
            parse_fasta(">a\nACGT\n>a\nAC\n")

    def test_illegal_residue_diagnoses_position(self):
        with pytest.raises(ParseError, match="line 2, column 3"):
            parse_fasta(">a\nACNT\n")

    def test_empty_input_rejected(self):
        with pytest.raises(ParseError):
            parse_fasta("")

    def test_roundtrip(self):
        seqs = [Sequence("a", "ACGT" * 40), Sequence("b", "")]
        assert parse_fasta(write_fasta(seqs))[0] == seqs[0]


class TestNewick:
    def test_three_taxon_canonical_form(self):
        tree = parse_newick("(a:0.1,b:0.2,c:0.3);")
        out = write_newick(tree)
        assert out == "(a:0.10000000000000001,b:0.20000000000000001,c:0.29999999999999999);"
        assert parse_newick(out) == tree

    def test_roundtrip_fuzz(self):
        rng = np.random.default_rng(0)
        cfg = PriorConfig(alpha_gamma=0.5)
        for _ in range(400):
            n = int(rng.integers(3, 11))
            taxa = tuple(sorted(f"t{i:02d}" for i in range(n)))
            tree = sample_prior(rng, cfg, taxa).tree
            text = write_newick(tree)
            again = parse_newick(text)
            canon, _ = canonicalize(tree)
            assert again == canon
            assert write_newick(again) == text

    def test_parse_error_has_position(self):
        with pytest.raises(ParseError, match="position"):
            parse_newick("(a:0.1,b:0.2;")

    def test_missing_length_rejected(self):
        with pytest.raises(ParseError):
            parse_newick("(a,b,c);")

    def test_rooted_two_child_form_collapses(self):
        tree = parse_newick("((a:0.1,b:0.2):0.05,c:0.25);")
        assert tree.n_taxa == 3
        # the two top edges merge: c keeps 0.25 + 0.05 on its path
        total = sum(tree.lengths)
        assert total == pytest.approx(0.6)


class TestHistorySerialization:
    def test_roundtrip_fuzz(self):
        rng = np.random.default_rng(1)
        cfg = PriorConfig(alpha_gamma=0.2, alpha_r=10, beta_r=90)
        for _ in range(100):
            data = simulate_dataset(int(rng.integers(3, 6)), cfg, rng)
            tree_c, hist_c = canonicalize(data.tree, data.history)
            text = serialize_history(hist_c)
            assert parse_history(text, tree_c) == hist_c

    def test_rejects_wrong_edge_ids(self):
        tree = parse_newick("(a:0.1,b:0.2,c:0.3);")
        with pytest.raises(ParseError):
            parse_history("root=4|0:|1:", tree)


class TestConfig:
    def test_defaults_roundtrip(self):
        cfg = RunConfig()
        assert config_from_dict(config_to_dict(cfg)) == cfg

    def test_parse_file_format(self):
        text = """
        # comment
        iters = 5000
        alpha_pi = 1,2,3,4   # trailing comment
        w_stop = 0.25
        prior_only = true
        scan_spr = 0.05
        """
        cfg = parse_config(text)
        assert cfg.iters == 5000
        assert cfg.prior.alpha_pi == (1.0, 2.0, 3.0, 4.0)
        assert cfg.tuning.w_stop == 0.25
        assert cfg.prior_only is True
        assert cfg.scan_weights[3] == 0.05

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            parse_config("bogus = 1\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            parse_config("iters = 1\niters = 2\n")

    def test_hash_tracks_content(self):
        a = RunConfig()
        b = RunConfig(iters=a.iters + 1)
        assert config_hash(a) != config_hash(b)
        assert config_hash(a) == config_hash(RunConfig())
        assert parse_config(format_config(a)) == a


class TestSampleLog:
    def test_roundtrip_through_text(self):
        cfg = RunConfig(
            prior=PriorConfig(alpha_gamma=0.2, alpha_r=10, beta_r=90),
            iters=400,
            thin=100,
        )
        rng = np.random.default_rng(2)
        data = Dataset(simulate_dataset(4, cfg.prior, rng).sequences)
        result = run_chain(data, cfg, rng)
        text = log_header(cfg, data.sequences)
        for s in result.samples:
            text += format_sample(s) + "\n"
        log = parse_sample_log(text)
        assert log.config_hash == config_hash(cfg)
        assert [s.name for s in log.sequences] == list(data.taxa)
        assert len(log.records) == len(result.samples)
        for rec, s in zip(log.records, result.samples):
            assert rec.iteration == s.iteration
            assert rec.log_posterior == s.log_posterior
            assert rec.params["r"] == s.indel.r
            assert rec.params["lambda"] == s.indel.lam
            canon_t, canon_h = canonicalize(s.tree, s.history)
            assert rec.tree == canon_t
            assert rec.history == canon_h
            assert rec.n_events == s.history.total_events

    def test_not_a_log_rejected(self):
        with pytest.raises(ParseError):
            parse_sample_log("nope\n")
