"""Rate-versus-distance figures from sweep rows (a convenience on top of the CSV output)."""

from __future__ import annotations

import csv
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .optimizer import SweepRow  # noqa: E402


def read_sweep_csv(path) -> list:
    """Rows of a sweep CSV as dictionaries with numeric fields converted."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            for key in ("L_km", "delta_max", "mu", "nu", "K_inf", "K_raw", "key_term", "ec_term"):
                row[key] = float(row[key]) if row[key] not in ("", "nan") else float("nan")
            row["xi"] = int(row["xi"])
            out.append(row)
    return out


def _as_dicts(rows):
    for r in rows:
        if isinstance(r, SweepRow):
            yield {
                "L_km": r.distance, "delta_max": r.delta_max, "xi": r.xi,
                "mode": r.mode, "model": r.model, "K_inf": r.k_inf,
            }
        else:
            yield r


def plot_rate_distance(rows: Union[Iterable, str, Path], path, title: str = "") -> Path:
    """Plot ``K_inf`` against distance, one curve per (mode, model, delta_max, xi).

    Zero rates are dropped from the logarithmic axis.
    """
    if isinstance(rows, (str, Path)):
        rows = read_sweep_csv(rows)
    curves: "OrderedDict[tuple, list]" = OrderedDict()
    for r in _as_dicts(rows):
        key = (r["mode"], r["model"], r["delta_max"], r["xi"])
        curves.setdefault(key, []).append((r["L_km"], r["K_inf"]))

    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    for (mode, model, dm, xi), pts in curves.items():
        pts = sorted(p for p in pts if p[1] > 0)
        if not pts:
            continue
        label = "no correlations" if dm == 0 else f"δ={dm:g}, ξ={xi}"
        if len({k[0] for k in curves}) > 1:
            label += f", {mode}"
        if len({k[1] for k in curves}) > 1:
            label += f", {model}"
        style = "k:" if dm == 0 else "-"
        ax.semilogy([p[0] for p in pts], [p[1] for p in pts], style, label=label)
    ax.set_xlabel("distance (km)")
    ax.set_ylabel("secret key rate (bits/pulse)")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out
