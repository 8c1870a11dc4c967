"""Figure rendering for report outputs.

Every figure lands next to its delimited file so a report directory is
self-contained. The Agg backend keeps rendering headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .backtest import Ledger, SweepResult
from .marketdata import LeadErrorStats

_DPI = 120


def render_ledger_figure(ledger: Ledger, path) -> None:
    """Cumulative revenue and SOC trajectory over the backtest window."""
    times = [entry.interval_start for entry in ledger.entries]
    revenue = np.cumsum([entry.revenue for entry in ledger.entries])
    soc = [entry.soc for entry in ledger.entries]
    fig, (ax_rev, ax_soc) = plt.subplots(2, 1, figsize=(10, 6), sharex=True)
    ax_rev.plot(times, revenue, color="tab:blue", lw=1.0)
    ax_rev.set_ylabel("cumulative revenue [$]")
    ax_rev.grid(True, alpha=0.3)
    ax_soc.plot(times, soc, color="tab:green", lw=0.8)
    ax_soc.set_ylabel("SOC [-]")
    ax_soc.set_xlabel("interval start")
    ax_soc.grid(True, alpha=0.3)
    fig.autofmt_xdate()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_sweep_figure(sweep: SweepResult, path) -> None:
    """Uplift over the baseline for each grid point, in row order."""
    rows = list(sweep.rows)
    labels = [f"{r.scheme[:3]}/g{r.gamma0:g}/l{r.lam:g}/s{r.s}" for r in rows]
    uplifts = [r.uplift_pct for r in rows]
    colors = ["tab:green" if u >= 0 else "tab:red" for u in uplifts]
    fig, ax = plt.subplots(figsize=(max(8, 0.3 * len(rows)), 5))
    ax.bar(range(len(rows)), uplifts, color=colors)
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=90, fontsize=7)
    ax.set_ylabel("uplift vs baseline [%]")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_error_stats_figure(stats: list[LeadErrorStats], path) -> None:
    """MAPE and max APE per forecast lead time."""
    leads = [s.lead_time for s in stats]
    mape = [s.mape_pct for s in stats]
    max_ape = [s.max_ape_pct for s in stats]
    fig, ax = plt.subplots(figsize=(9, 5))
    ax.plot(leads, mape, marker="o", ms=3, lw=1.0, label="MAPE [%]")
    ax.plot(leads, max_ape, marker="s", ms=3, lw=1.0, label="max APE [%]")
    ax.set_xlabel("lead time [half-hours]")
    ax.set_ylabel("absolute percentage error [%]")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
