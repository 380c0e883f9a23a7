"""Command-line front end.

Exit codes: 0 success, 1 configuration/usage error, 2 data or I/O error.
All result files are byte-stable for identical runs; the manifest records
the fully resolved configuration and seed, never timestamps.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import __version__
from .channel import ingest_trace, synthesize_trace
from .config import (build_experiment_config, build_synth_config, config_lines,
                     expand_sweep, parse_kv_file)
from .errors import ConfigError, DataError
from .metrics import MetricsReport
from .sim import run, sweep

log = logging.getLogger("bbnsim")

SUMMARY_COLUMNS = [
    "run_id", "policy", "routing", "arrival_rate_pps",
    "throughput_pkts_per_s", "pdr", "mean_backoff_ms",
    "spectral_efficiency_bps_per_hz", "throughput_bits_per_s",
    "spectral_efficiency_sum_bps_per_hz", "n_active_channels",
    "sent_transmissions", "delivered_transmissions",
]

REPORT_FILES = (
    "summary.csv",
    "backoff_hist.csv",
    "throughput_vs_arrival.csv",
    "outage_vs_gamma.csv",
    "pdr_vs_sensitivity.csv",
    "speff_vs_sensitivity.csv",
)


def fmt(value) -> str:
    """Numeric cell formatting: 6 significant digits, plain ints preserved."""
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def emit_report(reports: list[MetricsReport], outdir, force: bool = False) -> list[str]:
    """Write the delimited result tables for one or more runs.

    Existing result files abort the write unless ``force`` is set, before
    anything is touched.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if not force:
        existing = [f for f in REPORT_FILES if (outdir / f).exists()]
        if existing:
            raise ConfigError(
                f"refusing to overwrite {', '.join(existing)} in {outdir} "
                f"(use --force)")

    _write_csv(outdir / "summary.csv", SUMMARY_COLUMNS, (
        [i, r.policy, r.routing, r.arrival_rate_pps,
         r.throughput_pkts_per_s, r.pdr, r.mean_backoff_ms,
         r.spectral_efficiency_bps_per_hz, r.throughput_bits_per_s,
         r.spectral_efficiency_sum_bps_per_hz, r.n_active_channels,
         r.sent_transmissions, r.delivered_transmissions]
        for i, r in enumerate(reports)))

    def hist_rows():
        for i, r in enumerate(reports):
            hist = r.backoff_hist
            if hist.n_runs == 0:
                continue
            for (lo, hi), count, p_runs, p_time in zip(
                    hist.bins(), hist.counts, hist.pct_runs, hist.pct_time):
                yield [i, r.policy, r.routing, lo, hi, count, p_runs, p_time]

    _write_csv(outdir / "backoff_hist.csv",
               ["run_id", "policy", "routing", "bin_lo_ms", "bin_hi_ms",
                "runs", "pct_runs", "pct_time"], hist_rows())

    _write_csv(outdir / "throughput_vs_arrival.csv",
               ["run_id", "policy", "routing", "arrival_rate_pps",
                "throughput_pkts_per_s"],
               ([i, r.policy, r.routing, r.arrival_rate_pps, r.throughput_pkts_per_s]
                for i, r in enumerate(reports)))

    _write_csv(outdir / "outage_vs_gamma.csv",
               ["run_id", "policy", "routing", "gamma_th_db", "outage_probability"],
               ([i, r.policy, r.routing, g, p]
                for i, r in enumerate(reports) for g, p in r.outage_curve))

    _write_csv(outdir / "pdr_vs_sensitivity.csv",
               ["run_id", "policy", "routing", "rx_sensitivity_dbm", "pdr"],
               ([i, r.policy, r.routing, s, p]
                for i, r in enumerate(reports) for s, p in r.pdr_vs_sensitivity))

    _write_csv(outdir / "speff_vs_sensitivity.csv",
               ["run_id", "policy", "routing", "rx_sensitivity_dbm",
                "spectral_efficiency_bps_per_hz"],
               ([i, r.policy, r.routing, s, z]
                for i, r in enumerate(reports) for s, z in r.speff_vs_sensitivity))
    return list(REPORT_FILES)


def write_manifest(outdir, configs, extra: dict | None = None) -> None:
    lines = [f"bbnsim {__version__}", f"runs = {len(configs)}"]
    if extra:
        for k in sorted(extra):
            lines.append(f"{k} = {extra[k]}")
    for i, cfg in enumerate(configs):
        lines.append(f"[run {i}]")
        lines.extend(config_lines(cfg))
    (Path(outdir) / "manifest.txt").write_text("\n".join(lines) + "\n",
                                               encoding="utf-8")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="bbnsim",
                     description="Body-area-network coexistence simulator")
    parser.add_argument("--version", action="version", version=f"bbnsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="key=value config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing result files")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
        p.add_argument("--no-figures", action="store_true",
                       help="skip PNG rendering, write only delimited files")

    p_run = sub.add_parser("run", help="execute one experiment")
    common(p_run)
    p_sweep = sub.add_parser("sweep", help="execute the sweep.* grid of a config")
    common(p_sweep)
    p_val = sub.add_parser("validate-trace", help="check a trace CSV")
    p_val.add_argument("--trace", required=True, help="trace CSV path")
    p_val.add_argument("--quiet", action="store_true")
    p_synth = sub.add_parser("synth", help="generate a synthetic trace CSV")
    common(p_synth)
    return parser


def _setup_logging(quiet: bool) -> None:
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)


def _cmd_run(args) -> int:
    kv = parse_kv_file(args.config)
    cfg = build_experiment_config(kv)
    if args.seed is not None:
        cfg.seed = args.seed
    log.info("running %s / %s at %g pkts/s (seed %d)",
             cfg.policy_label, cfg.routing_strategy, cfg.arrival_rate_pps, cfg.seed)
    report = run(cfg)
    emit_report([report], args.out, args.force)
    write_manifest(args.out, [cfg])
    if not args.no_figures:
        from .plots import render_figures
        render_figures([report], args.out)
    log.info("wrote results to %s", args.out)
    return 0


def _cmd_sweep(args) -> int:
    kv = parse_kv_file(args.config)
    configs = expand_sweep(kv)
    if args.seed is not None:
        for c in configs:
            c.seed = args.seed
    log.info("sweeping %d runs", len(configs))
    results = sweep(configs)
    failures = [(i, r) for i, r in enumerate(results) if isinstance(r, Exception)]
    reports = [r for r in results if isinstance(r, MetricsReport)]
    for i, exc in failures:
        print(f"run {i} failed: {exc}", file=sys.stderr)
    if not reports:
        raise ConfigError("every sweep entry failed")
    emit_report(reports, args.out, args.force)
    write_manifest(args.out, configs)
    if not args.no_figures:
        from .plots import render_figures
        render_figures(reports, args.out)
    log.info("wrote results to %s", args.out)
    return 0 if not failures else 1


def _cmd_validate(args) -> int:
    trace = ingest_trace(args.trace)
    print(f"ok: {len(trace.links())} links, {trace.num_samples} samples at "
          f"{trace.sample_period_ms} ms, {trace.num_bans} BANs, "
          f"{trace.duration_ms} ms total")
    return 0


def _cmd_synth(args) -> int:
    kv = parse_kv_file(args.config)
    cfg = build_synth_config(kv)
    seed = args.seed
    if seed is None:
        seed = int(kv["seed"]) if "seed" in kv else 0
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    target = outdir / "trace.csv"
    if target.exists() and not args.force:
        raise ConfigError(f"refusing to overwrite {target} (use --force)")
    trace = synthesize_trace(cfg, seed)
    trace.to_csv(target)
    log.info("wrote %s (%d links x %d samples)", target,
             len(trace.links()), trace.num_samples)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(getattr(args, "quiet", False))
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep,
                "validate-trace": _cmd_validate, "synth": _cmd_synth}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
