"""Figure rendering for the report path.

Reads the per-run CSV series (t, round, loss, grad_norm_sq, consensus_err,
bytes_cumulative) and writes PNG comparison figures next to the tabular
output.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["load_series", "render_report_figures"]


def load_series(path) -> dict[str, list[float]]:
    cols: dict[str, list[float]] = {}
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        for row in r:
            for k, v in row.items():
                cols.setdefault(k, []).append(float(v))
    return cols


def _plot(ax, series_by_name, xkey, ykey, logy=True):
    for name, s in series_by_name.items():
        ax.plot(s[xkey], s[ykey], label=name, linewidth=1.2)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xkey)
    ax.set_ylabel(ykey)
    ax.legend(fontsize=7)
    ax.grid(True, alpha=0.3)


def render_report_figures(series_by_name: dict[str, dict], outdir) -> list[str]:
    """Write loss/consensus/byte-efficiency figures; returns written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    panels = [
        ("loss_vs_round.png", "round", "loss"),
        ("gradnorm_vs_round.png", "round", "grad_norm_sq"),
        ("consensus_vs_round.png", "round", "consensus_err"),
        ("loss_vs_bytes.png", "bytes_cumulative", "loss"),
    ]
    for fname, xkey, ykey in panels:
        fig, ax = plt.subplots(figsize=(6, 4))
        _plot(ax, series_by_name, xkey, ykey)
        fig.tight_layout()
        path = outdir / fname
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(str(path))
    return written
