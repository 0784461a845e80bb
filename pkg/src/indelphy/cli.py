"""Command-line interface.

Subcommands: simulate (forward model), sample (run MCMC chains), summarize
(posterior reports from sample logs), validate-prior (prior-recovery
protocol), and diagnose (cross-run convergence checks).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import summaries
from .config import RunConfig, config_hash, format_config, parse_config
from .engine import Dataset, run_chain
from .io import (
    RunLog,
    format_sample,
    log_header,
    parse_fasta,
    parse_sample_log,
    write_fasta,
    write_gapped_fasta,
    write_newick,
)
from .types import project_alignment
from .validate import prior_recovery


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config(Path(path).read_text())


def _chain_rngs(seed: int, chains: int):
    return [np.random.default_rng([seed, k]) for k in range(chains)]


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    from dataclasses import replace

    updates = {}
    for key in ("iters", "thin", "seed", "chains", "burn_in"):
        val = getattr(args, key, None)
        if val is not None:
            updates[key] = val
    if getattr(args, "prior_only", False):
        updates["prior_only"] = True
    return replace(cfg, **updates) if updates else cfg


def cmd_simulate(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    rng = np.random.default_rng([cfg.seed, 77])
    from .simulate import simulate_dataset

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = simulate_dataset(args.taxa, cfg.prior, rng, root_length=args.root_length)
    (out / "seqs.fasta").write_text(write_fasta(data.sequences))
    rows = dict(zip(data.alignment.taxa, data.alignment.matrix()))
    (out / "true_alignment.fasta").write_text(write_gapped_fasta(rows))
    from .engine import ChainSample

    truth = ChainSample(
        0, 0.0, data.tree, data.history, data.subst, data.indel, data.gamma
    )
    (out / "truth.tsv").write_text(
        log_header(cfg, data.sequences) + format_sample(truth) + "\n"
    )
    (out / "config.txt").write_text(format_config(cfg))
    print(f"wrote {args.taxa}-taxon dataset to {out}")
    return 0


def cmd_sample(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    sequences = parse_fasta(Path(args.fasta).read_text())
    data = Dataset(sequences)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(cfg))
    for k, rng in enumerate(_chain_rngs(cfg.seed, cfg.chains)):
        path = out / f"chain{k}.tsv"
        with path.open("w") as fh:
            fh.write(log_header(cfg, data.sequences))
            result = run_chain(
                data, cfg, rng, on_sample=lambda s: fh.write(format_sample(s) + "\n")
            )
        rates = "  ".join(
            f"{c}={result.stats.rate(c):.3f}" for c in result.stats.proposed
        )
        print(f"chain {k}: {len(result.samples)} samples -> {path}  accept: {rates}")
    return 0


def _load_logs(paths, burn_in: float) -> list[RunLog]:
    logs = []
    for path in paths:
        log = parse_sample_log(Path(path).read_text())
        cut = int(len(log.records) * burn_in)
        log.records = log.records[cut:]
        logs.append(log)
    hashes = {log.config_hash for log in logs}
    if len(hashes) > 1:
        raise ValueError("sample logs come from different configurations")
    return logs


ACC_RAMP = [21, 27, 33, 39, 45, 51, 87, 123, 159, 196]  # blue -> red, 10 bins


def _accuracy_bin(acc: float) -> int:
    return min(9, max(0, int(acc * 10)))


def _render_alignment_text(alignment, accuracies) -> str:
    rows = alignment.matrix()
    lines = []
    width = max(len(t) for t in alignment.taxa)
    for k, taxon in enumerate(alignment.taxa):
        cells = []
        for c, ch in enumerate(rows[k]):
            color = ACC_RAMP[_accuracy_bin(accuracies[c][k])]
            cells.append(f"\x1b[38;5;{color}m{ch}\x1b[0m")
        lines.append(f"{taxon:<{width}}  " + "".join(cells))
    return "\n".join(lines) + "\n"


def _render_alignment_html(alignment, accuracies) -> str:
    rows = alignment.matrix()
    body = []
    body.append("<pre style='font-family: monospace'>")
    palette = [
        "#2166ac", "#4393c3", "#92c5de", "#d1e5f0", "#f7f7f7",
        "#fddbc7", "#f4a582", "#d6604d", "#b2182b", "#67001f",
    ]
    width = max(len(t) for t in alignment.taxa)
    for k, taxon in enumerate(alignment.taxa):
        cells = [f"{taxon:<{width}}  "]
        for c, ch in enumerate(rows[k]):
            color = palette[_accuracy_bin(accuracies[c][k])]
            cells.append(f"<span style='background:{color}'>{ch}</span>")
        body.append("".join(cells))
    body.append("</pre>")
    return "\n".join(body) + "\n"


def _split_name(key, taxa) -> str:
    side = set(key)
    left = ",".join(taxa[i] for i in sorted(side))
    right = ",".join(taxa[i] for i in range(len(taxa)) if i not in side)
    return f"{left} | {right}"


def cmd_summarize(args) -> int:
    logs = _load_logs(args.samples, args.burn_in)
    records = [r for log in logs for r in log.records]
    if not records:
        print("no post-burn-in samples", file=sys.stderr)
        return 1
    sequences = logs[0].sequences
    report = Path(args.report_dir)
    report.mkdir(parents=True, exist_ok=True)
    taxa = tuple(s.name for s in sorted(sequences, key=lambda s: s.name))

    alignments = [
        project_alignment(r.history, r.tree, sequences) for r in records
    ]
    posteriors = summaries.pair_homology_posteriors(alignments)
    seq_by_name = {s.name: s.bases for s in sequences}
    alignment, accuracies = summaries.annealed_alignment(
        posteriors, taxa, tuple(seq_by_name[t] for t in taxa), args.gap_factor
    )
    (report / "alignment.txt").write_text(_render_alignment_text(alignment, accuracies))
    (report / "alignment.html").write_text(_render_alignment_html(alignment, accuracies))

    trees = [r.tree for r in records]
    topo, splits = summaries.topology_split_table(trees)
    with (report / "topologies.tsv").open("w") as fh:
        fh.write("posterior\ttopology\n")
        by_prob = sorted(topo.items(), key=lambda kv: -kv[1])
        for key, prob in by_prob:
            label = "; ".join(_split_name(s, taxa) for s in sorted(key)) or "(star)"
            fh.write(f"{prob:.6f}\t{label}\n")
    stats = summaries.split_indel_stats([(r.tree, r.history) for r in records])
    with (report / "splits.tsv").open("w") as fh:
        fh.write("split\tposterior\tmean_indel_events\tmean_edge_length\n")
        for key, (prob, ev, ln) in sorted(stats.items(), key=lambda kv: -kv[1][0]):
            fh.write(f"{_split_name(key, taxa)}\t{prob:.6f}\t{ev:.4f}\t{ln:.6f}\n")
    frag = summaries.fragment_size_posterior([r.history for r in records])
    with (report / "fragment_sizes.tsv").open("w") as fh:
        fh.write("size\tposterior_mass\n")
        if not frag:
            fh.write("# no indel events in any sample\n")
        for size, mass in frag.items():
            fh.write(f"{size}\t{mass:.6f}\n")
    names = ("r", "r_d", "lambda", "kappa", "pi_A", "pi_C", "pi_G", "pi_T", "gamma")
    with (report / "params.tsv").open("w") as fh:
        fh.write("parameter\tmean\tsd\tq05\tq50\tq95\n")
        for name in names:
            vals = np.array([r.params[name] for r in records])
            q = np.quantile(vals, [0.05, 0.5, 0.95])
            fh.write(
                f"{name}\t{vals.mean():.6g}\t{vals.std(ddof=1):.6g}"
                f"\t{q[0]:.6g}\t{q[1]:.6g}\t{q[2]:.6g}\n"
            )
    print(f"reports written to {report}")
    return 0


def cmd_diagnose(args) -> int:
    if len(args.samples) < 2:
        print("error: need >=2 runs to diagnose convergence", file=sys.stderr)
        return 2
    logs = _load_logs(args.samples, args.burn_in)
    n = min(len(log.records) for log in logs)
    if n < 2:
        print("error: need >=2 post-burn-in samples per run", file=sys.stderr)
        return 2
    names = ("r", "r_d", "lambda", "kappa", "pi_A", "pi_C", "pi_G", "pi_T", "gamma")
    print("parameter\tR")
    worst = 0.0
    for name in names:
        traces = np.array([[rec.params[name] for rec in log.records[:n]] for log in logs])
        gr = summaries.gelman_rubin(traces)
        label = "degenerate" if gr.degenerate else f"{gr.r:.4f}"
        if not gr.degenerate:
            worst = max(worst, gr.r)
        print(f"{name}\t{label}")
    runs = [[rec.tree for rec in log.records[:n]] for log in logs]
    spreads, ok = summaries.clade_frequency_spreads(runs, args.clade_threshold)
    taxa = tuple(s.name for s in sorted(logs[0].sequences, key=lambda s: s.name))
    print("\nsplit\tmax-min frequency")
    for key, spread in sorted(spreads.items(), key=lambda kv: -kv[1]):
        print(f"{_split_name(key, taxa)}\t{spread:.4f}")
    r_ok = worst < args.r_threshold
    print(f"\nGelman-Rubin: max R = {worst:.4f} ({'PASS' if r_ok else 'FAIL'} < {args.r_threshold})")
    print(f"clade spreads: {'PASS' if ok else 'FAIL'} (< {args.clade_threshold})")
    return 0 if (ok and r_ok) else 1


def cmd_validate_prior(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    report = prior_recovery(
        n_taxa=args.taxa,
        n_datasets=args.datasets,
        cfg=cfg,
        seed=cfg.seed,
    )
    print(report.table())
    print("PASS" if report.ok else "FAIL")
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="indelphy",
        description="Joint inference of alignment and phylogeny over indel histories",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a dataset from the model")
    p.add_argument("--taxa", type=int, required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--root-length", type=int, default=None)
    p.add_argument("--out-dir", default="sim_out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sample", help="run MCMC chains on a FASTA file")
    p.add_argument("--fasta", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--chains", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--prior-only", action="store_true")
    p.add_argument("--out-dir", default="mcmc_out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("summarize", help="summarize posterior samples")
    p.add_argument("--samples", nargs="+", required=True)
    p.add_argument("--burn-in", dest="burn_in", type=float, default=0.25)
    p.add_argument("--gap-factor", type=float, default=0.5)
    p.add_argument("--report-dir", default="report")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("validate-prior", help="prior-recovery validation protocol")
    p.add_argument("--datasets", type=int, default=20)
    p.add_argument("--iters", type=int)
    p.add_argument("--taxa", type=int, default=4)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_validate_prior)

    p = sub.add_parser("diagnose", help="convergence diagnostics across runs")
    p.add_argument("--samples", nargs="+", required=True)
    p.add_argument("--burn-in", dest="burn_in", type=float, default=0.25)
    p.add_argument("--r-threshold", type=float, default=1.05)
    p.add_argument("--clade-threshold", type=float, default=0.05)
    p.set_defaults(func=cmd_diagnose)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
