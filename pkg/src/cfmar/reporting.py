"""Report rendering: per-slice CSV tables, JSON summaries and line plots.

Numbers are written with repr-style full precision so repeated runs with
the same seed produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
import os

import numpy as np

from .errors import ParameterError
from .metrics import SliceReport, max_slice_difference


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _agg() -> None:
    import matplotlib

    matplotlib.use("Agg")


def write_slice_csv(path, ssim_rep: SliceReport, psnr_rep: SliceReport):
    """One row per axial slice: index, ssim, psnr_db, contains_metal."""
    if not np.array_equal(ssim_rep.slice_index, psnr_rep.slice_index):
        raise ParameterError("ssim and psnr reports cover different slices")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "ssim", "psnr_db", "contains_metal"])
        for k in range(ssim_rep.slice_index.size):
            w.writerow(
                [
                    int(ssim_rep.slice_index[k]),
                    _fmt(ssim_rep.ssim[k]),
                    _fmt(psnr_rep.psnr_db[k]),
                    int(ssim_rep.contains_metal[k]),
                ]
            )


def summarize_runs(reports: dict) -> dict:
    """Aggregate a {run_name: {"ssim": SliceReport, "psnr": SliceReport}} map.

    Gives per-run means/medians over metal-containing slices plus, for every
    ordered run pair, the largest per-slice advantage of the first over the
    second.
    """
    summary = {"runs": {}, "pairwise_max_slice_difference": {}}
    for name, reps in reports.items():
        summary["runs"][name] = {
            "ssim_mean": reps["ssim"].mean("ssim"),
            "ssim_median": reps["ssim"].median("ssim"),
            "psnr_db_mean": reps["psnr"].mean("psnr_db"),
            "psnr_db_median": reps["psnr"].median("psnr_db"),
            "metal_slices": int(reps["ssim"].contains_metal.sum()),
        }
    names = list(reports)
    for a in names:
        for b in names:
            if a == b:
                continue
            summary["pairwise_max_slice_difference"][f"{a}-{b}"] = {
                "ssim": max_slice_difference(
                    reports[a]["ssim"], reports[b]["ssim"], "ssim"
                ),
                "psnr_db": max_slice_difference(
                    reports[a]["psnr"], reports[b]["psnr"], "psnr_db"
                ),
            }
    return summary


def write_summary_json(path, summary: dict):
    def clean(x):
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, float) and not math.isfinite(x):
            return repr(x)
        return x

    with open(path, "w") as f:
        json.dump(clean(summary), f, indent=2, sort_keys=True)


def plot_slice_metric(path, reports: dict, metric: str, ylabel: str = None):
    """Per-slice line plot of one metric for every run, metal slices shaded."""
    _agg()
    from matplotlib import pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    shaded = False
    for name, rep in reports.items():
        vals = np.array(getattr(rep, metric), dtype=float)
        vals[~np.isfinite(vals)] = np.nan
        ax.plot(rep.slice_index, vals, label=name, linewidth=1.2)
        if not shaded and rep.contains_metal.any():
            idx = np.flatnonzero(rep.contains_metal)
            ax.axvspan(idx[0] - 0.5, idx[-1] + 0.5, color="0.9", zorder=0)
            shaded = True
    ax.set_xlabel("axial slice")
    ax.set_ylabel(ylabel or metric)
    ax.legend()
    fig.tight_layout()
    fig.savefig(os.fspath(path), dpi=120)
    plt.close(fig)


TAU_FIELDS = ("tau", "precision", "recall", "f_score", "ssim")


def write_tau_csv(path, rows):
    """rows: iterable of dicts with keys tau, precision, recall, f_score, ssim."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TAU_FIELDS)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in TAU_FIELDS])


def plot_tau_sweep(path, rows):
    """Precision/recall/F and reconstruction SSIM against tau."""
    _agg()
    from matplotlib import pyplot as plt

    taus = [row["tau"] for row in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key in ("precision", "recall", "f_score"):
        ax.plot(taus, [row[key] for row in rows], marker="o", label=key)
    ssim = [row["ssim"] for row in rows]
    if any(v is not None and math.isfinite(v) for v in ssim):
        ax2 = ax.twinx()
        ax2.plot(taus, ssim, marker="s", color="0.3", linestyle="--", label="ssim")
        ax2.set_ylabel("masked SSIM")
    ax.set_xlabel("consistency threshold tau")
    ax.set_ylabel("mask quality")
    ax.legend(loc="lower left")
    fig.tight_layout()
    fig.savefig(os.fspath(path), dpi=120)
    plt.close(fig)
