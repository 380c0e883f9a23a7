"""Figure rendering for run reports.

Each figure mirrors one of the delimited report files, so a results
directory carries both the plottable data and a rendered view of it.
PNG output is byte-stable for identical reports.
"""

from __future__ import annotations

import math
from pathlib import Path

FIGURE_FILES = (
    "backoff_hist.png",
    "throughput_vs_arrival.png",
    "outage_vs_gamma.png",
    "pdr_vs_sensitivity.png",
    "speff_vs_sensitivity.png",
)

_SAVE_KW = dict(dpi=110, metadata={"Software": "bbnsim"})


def _pyplot():
    import matplotlib
    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt
    return plt


def _label(report) -> str:
    return f"{report.policy}/{report.routing}"


def render_figures(reports, outdir) -> list[str]:
    """Write the five report figures; returns the file names written."""
    plt = _pyplot()
    outdir = Path(outdir)
    written = []

    fig, ax = plt.subplots(figsize=(7, 4))
    for i, rep in enumerate(reports):
        hist = rep.backoff_hist
        if hist.n_runs == 0:
            continue
        centers = [(lo + (hi if math.isfinite(hi) else lo + 100)) / 2.0
                   for lo, hi in hist.bins()]
        ax.step(centers, [100.0 * p for p in hist.pct_time], where="mid",
                label=f"run{i} {_label(rep)}")
    ax.set_xlabel("continuous back-off duration (ms)")
    ax.set_ylabel("share of backed-off time (%)")
    ax.set_title("Back-off duration distribution")
    if ax.has_data():
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(outdir / "backoff_hist.png", **_SAVE_KW)
    plt.close(fig)
    written.append("backoff_hist.png")

    fig, ax = plt.subplots(figsize=(7, 4))
    by_label: dict[str, list] = {}
    for rep in reports:
        by_label.setdefault(_label(rep), []).append(
            (rep.arrival_rate_pps, rep.throughput_pkts_per_s))
    for label, pts in sorted(by_label.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
    ax.set_xlabel("packet arrival rate (pkts/s per source)")
    ax.set_ylabel("throughput (successful pkts/s)")
    ax.set_title("Throughput vs arrival rate")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(outdir / "throughput_vs_arrival.png", **_SAVE_KW)
    plt.close(fig)
    written.append("throughput_vs_arrival.png")

    curves = (
        ("outage_vs_gamma.png", "outage_curve",
         "SINR threshold (dB)", "outage probability", "Outage vs SINR threshold"),
        ("pdr_vs_sensitivity.png", "pdr_vs_sensitivity",
         "receive sensitivity (dBm)", "packet delivery ratio", "PDR vs sensitivity"),
        ("speff_vs_sensitivity.png", "speff_vs_sensitivity",
         "receive sensitivity (dBm)", "spectral efficiency (b/s/Hz)",
         "Spectral efficiency vs sensitivity"),
    )
    for fname, attr, xlabel, ylabel, title in curves:
        fig, ax = plt.subplots(figsize=(7, 4))
        for i, rep in enumerate(reports):
            pts = getattr(rep, attr)
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                    label=f"run{i} {_label(rep)}")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(outdir / fname, **_SAVE_KW)
        plt.close(fig)
        written.append(fname)
    return written
