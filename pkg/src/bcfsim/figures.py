"""Figure rendering for the report path: PNG plots next to their CSV data."""

from __future__ import annotations

import math
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bmcl import sum_capacity
from .harness import SimResult, emit_csv
from .lqg import lqg_symmetric_rate

__all__ = ["apply_style", "render_capacity_figure", "render_bler_figure"]


def apply_style() -> None:
    plt.rcParams.update({
        "font.size": 9,
        "axes.labelsize": 10,
        "legend.fontsize": 8,
        "figure.figsize": (5.0, 3.6),
        "figure.dpi": 120,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "grid.linestyle": "--",
        "lines.linewidth": 1.2,
        "lines.markersize": 4,
        "savefig.dpi": 200,
        "savefig.bbox": "tight",
    })


def render_capacity_figure(out_dir: str, snr_db_list=(0.0, 5.0, 10.0),
                           max_users: int = 256) -> tuple[str, str]:
    """Sum rate versus user count, with its many-user limit and the
    single-user AWGN capacity for reference.  Returns (png, csv) paths."""
    apply_style()
    users = [1 << k for k in range(0, int(math.log2(max_users)) + 1)]
    fig, ax = plt.subplots()
    csv_path = os.path.join(out_dir, "capacity_vs_users.csv")
    png_path = os.path.join(out_dir, "capacity_vs_users.png")
    with open(csv_path, "w") as fh:
        fh.write("snr_db,users,c_sum,c_limit,c_awgn\n")
        for snr_db in snr_db_list:
            snr = 10.0 ** (snr_db / 10.0)
            awgn = 0.5 * math.log2(1.0 + snr)
            rows = [sum_capacity(snr, L) for L in users]
            limit = rows[0].c_limit
            for r in rows:
                fh.write(f"{snr_db:.9g},{r.L},{r.c_sum:.9g},{limit:.9g},{awgn:.9g}\n")
            line, = ax.plot(users, [r.c_sum for r in rows], marker="o",
                            label=f"sum rate, {snr_db:g} dB")
            ax.axhline(limit, color=line.get_color(), linestyle=":", alpha=0.7)
            ax.axhline(awgn, color=line.get_color(), linestyle="--", alpha=0.4)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("number of users")
    ax.set_ylabel("sum rate (bits / channel use)")
    ax.legend()
    fig.savefig(png_path)
    plt.close(fig)
    return png_path, csv_path


_MARKERS = {"ol": "o", "eol": "s", "lqg": "^", "bmcl": "d", "sk-tdd": "v",
            "sk": "x", "uncoded": "+"}


def render_bler_figure(results: list[SimResult], out_dir: str,
                       stem: str = "bler") -> tuple[str, str]:
    """Mean BLER curves grouped per scheme, against forward SNR or feedback
    noise depending on which axis actually varies."""
    apply_style()
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    png_path = os.path.join(out_dir, f"{stem}.png")
    emit_csv(results, csv_path)

    snrs = sorted({r.snr_b_db for r in results})
    fbs = sorted({r.sigma_f2_db for r in results})
    x_axis = "snr" if len(snrs) >= len(fbs) else "fb"

    fig, ax = plt.subplots()
    schemes = sorted({(r.scheme, r.K, r.N) for r in results})
    for scheme, k, n in schemes:
        rows = sorted((r for r in results
                       if (r.scheme, r.K, r.N) == (scheme, k, n)),
                      key=lambda r: r.snr_b_db if x_axis == "snr" else r.sigma_f2_db)
        xs = [r.snr_b_db if x_axis == "snr" else r.sigma_f2_db for r in rows]
        ys = [max(r.mean_bler, 1e-12) for r in rows]
        lo = [max(float(np.mean(r.ci_lo)), 1e-12) for r in rows]
        hi = [max(float(np.mean(r.ci_hi)), 1e-12) for r in rows]
        ax.plot(xs, ys, marker=_MARKERS.get(scheme, "."), label=f"{scheme} {k}/{n}")
        ax.fill_between(xs, lo, hi, alpha=0.15)
    ax.set_yscale("log")
    ax.set_xlabel("forward SNR (dB)" if x_axis == "snr" else "feedback noise power (dB)")
    ax.set_ylabel("block error rate")
    ax.legend()
    fig.savefig(png_path)
    plt.close(fig)
    return png_path, csv_path
