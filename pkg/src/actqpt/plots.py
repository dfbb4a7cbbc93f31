"""Figure rendering for run directories.

Figures are produced from the delimited trace files (not from in-memory
state), mirroring how they would be regenerated downstream.  PNG output is
deterministic: fixed geometry, no timestamps, scrubbed writer metadata.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import bkd_baseline
from .reportio import csv_to_trace_rows

__all__ = ["render_run_figures"]

_PNG_METADATA = {"Software": None}


def _trial_curves(rows, key):
    """Per-trial (M, value) step curves for one trace column."""
    xs, ys = [], []
    for row in rows:
        if row[key] is None:
            continue
        xs.append(row["M"])
        ys.append(row[key])
    return xs, ys


def render_run_figures(run_dir, dim: int | None = None, threshold: float = 1e-3) -> list[Path]:
    """Render certification and fidelity figures from every trace CSV in
    `run_dir`.  Returns the written figure paths."""
    run_dir = Path(run_dir)
    trace_files = sorted(run_dir.glob("trial_*_trace.csv"))
    if not trace_files:
        raise FileNotFoundError(f"no trace CSV files under {run_dir}")
    all_rows = [csv_to_trace_rows(p.read_text()) for p in trace_files]
    if dim is None:
        # every basis contributes dim outcomes: first row's M equals dim
        dim = all_rows[0][0]["M"]

    written = []
    fig, axes = plt.subplots(2, 1, figsize=(6.0, 6.5), sharex=True)
    ax_s, ax_f = axes

    for rows in all_rows:
        xs, ys = _trial_curves(rows, "s_cvx_process")
        if xs:
            ax_s.plot(xs, np.maximum(ys, 1e-16), marker="o", ms=3, lw=0.9, alpha=0.6)
        xf, yf = _trial_curves(rows, "fidelity")
        if xf:
            ax_f.plot(xf, yf, marker="o", ms=3, lw=0.9, alpha=0.6)

    m_bkd = bkd_baseline(dim)
    for ax in axes:
        ax.axvline(m_bkd, color="k", ls=":", lw=1, label=f"benchmark settings ({m_bkd})")
    ax_s.axhline(threshold, color="r", ls="--", lw=1, label=f"termination threshold {threshold:g}")
    ax_s.set_yscale("log")
    ax_s.set_ylabel("process certificate spread")
    ax_s.legend(fontsize=8, loc="upper right")
    ax_f.set_xlabel("accumulated measurement outcomes M")
    ax_f.set_ylabel("fidelity to target")
    ax_f.set_ylim(0.0, 1.05)
    fig.tight_layout()

    out = run_dir / "certification_and_fidelity.png"
    fig.savefig(out, dpi=150, metadata=_PNG_METADATA)
    plt.close(fig)
    written.append(out)

    # state-level certificate decay, one panel
    fig2, ax = plt.subplots(figsize=(6.0, 3.6))
    for rows in all_rows:
        xs = [r["M"] for r in rows]
        ys = [max(r["s_cvx_state"], 1e-16) for r in rows]
        ax.plot(xs, ys, marker=".", ms=3, lw=0.7, alpha=0.6)
    ax.axhline(threshold, color="r", ls="--", lw=1)
    ax.set_yscale("log")
    ax.set_xlabel("accumulated measurement outcomes M")
    ax.set_ylabel("state certificate spread")
    fig2.tight_layout()
    out2 = run_dir / "state_certificates.png"
    fig2.savefig(out2, dpi=150, metadata=_PNG_METADATA)
    plt.close(fig2)
    written.append(out2)
    return written
