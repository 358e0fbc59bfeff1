"""Figure rendering for reports: delay/throughput curves and run traces.

Figures are written next to the delimited output; everything uses the Agg
backend so headless runs work.
"""

from __future__ import annotations

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .harness import RunReport


def render_sweep_figures(report: RunReport, outdir) -> list[str]:
    """Delay-vs-load and throughput-vs-load curves; returns written paths."""
    entries = [e for e in report.entries if e.mean_delay is not None]
    paths = []
    algo = report.config.get("algorithm", "?")

    fig, ax = plt.subplots(figsize=(6, 4))
    if entries:
        lams = [e.lam for e in entries]
        ax.plot(lams, [e.mean_delay for e in entries], "o-", label="mean delay")
        ax.plot(lams, [e.p95_delay for e in entries], "s--", label="p95 delay")
    ax.set_xlabel("arrival rate $\\lambda$ (packets/slot/node)")
    ax.set_ylabel("delay (slots)")
    ax.set_title(f"delay vs load ({algo})")
    ax.legend()
    ax.grid(True, alpha=0.3)
    paths.append(_save(fig, outdir, "delay_vs_lambda.png"))

    fig, ax = plt.subplots(figsize=(6, 4))
    lams = [e.lam for e in report.entries]
    ax.plot(lams, [e.throughput for e in report.entries], "o-", label="delivered/slot")
    ax.plot(lams, [e.offered_rate for e in report.entries], ":", label="offered/slot")
    ax.set_xlabel("arrival rate $\\lambda$ (packets/slot/node)")
    ax.set_ylabel("packets/slot")
    ax.set_title(f"throughput vs load ({algo})")
    ax.legend()
    ax.grid(True, alpha=0.3)
    paths.append(_save(fig, outdir, "throughput_vs_lambda.png"))
    return paths


def render_run_figures(report: RunReport, outdir) -> list[str]:
    """Queue-length trace per sweep point, one panel each."""
    if not report.entries:
        return []
    n = len(report.entries)
    fig, axes = plt.subplots(n, 1, figsize=(6, 2.5 * n), squeeze=False)
    for ax, e in zip(axes[:, 0], report.entries):
        trace = e.queue_trace
        stride = max(1, e.slots // max(len(trace), 1))
        ax.plot([i * stride for i in range(len(trace))], trace, lw=0.8)
        ax.set_ylabel("total queue")
        ax.set_title(f"$\\lambda$={e.lam:g}  ({e.verdict})", fontsize=9)
        ax.grid(True, alpha=0.3)
    axes[-1, 0].set_xlabel("slot")
    return [_save(fig, outdir, "queue_trace.png")]


def _save(fig, outdir, name: str) -> str:
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, name)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
