"""Static SVG figures with CSV twins, plus a small lowess smoother.

Every figure is written next to a CSV holding exactly the plotted numbers.
SVG output is made reproducible by fixing the hash salt and dropping the
creation date from the metadata.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SVG_META = {"Date": None, "Creator": "fairdcov"}


def lowess(x, y, frac: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Locally linear fit with tricube weights, one pass, no robustness steps.

    ``frac`` is the share of points in each local window. Returns the
    sorted x values and the fitted curve at each of them.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    n = x.size
    if n == 0:
        return x, y
    k = min(n, max(2, int(math.ceil(frac * n))))
    fitted = np.empty(n)
    for i in range(n):
        dist = np.abs(x - x[i])
        h = np.partition(dist, k - 1)[k - 1]
        if h <= 0:
            fitted[i] = y[dist == 0].mean()
            continue
        w = np.clip(1 - (dist / h) ** 3, 0, None) ** 3
        sw = w.sum()
        xm = (w @ x) / sw
        ym = (w @ y) / sw
        sxx = w @ (x - xm) ** 2
        slope = (w @ ((x - xm) * (y - ym))) / sxx if sxx > 1e-12 * sw else 0.0
        fitted[i] = ym + slope * (x[i] - xm)
    return x, fitted


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def write_csv(path, rows: Sequence[dict], columns: Sequence[str]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])
    return path


def _save(fig, path) -> Path:
    path = Path(path)
    with plt.rc_context({"svg.hashsalt": "fairdcov", "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)
    return path


def calibration_plots(rows: Sequence[dict], out_dir) -> list[Path]:
    """JSD against lambda and JSD against RPS, one curve per regulariser."""
    out_dir = Path(out_dir)
    regs = sorted({r["regulariser"] for r in rows})
    written = []
    for name, xkey, xlabel in (("jsd_vs_lambda", "lambda", "lambda"),
                               ("jsd_vs_rps", "mean_RPS", "mean validation RPS")):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for reg in regs:
            pts = sorted((r[xkey], r["mean_JSD"]) for r in rows if r["regulariser"] == reg)
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=reg)
        if xkey == "lambda" and all(r["lambda"] >= 0 for r in rows):
            ax.set_xscale("symlog", linthresh=max(min((r["lambda"] for r in rows
                                                       if r["lambda"] > 0), default=1.0), 1e-6))
        ax.set_xlabel(xlabel)
        ax.set_ylabel("mean validation JSD")
        ax.legend()
        fig.tight_layout()
        written.append(_save(fig, out_dir / f"{name}.svg"))
    return written


def _shown(counts: dict[str, int], minimum: int) -> list[str]:
    return sorted(g for g, c in counts.items() if c >= minimum)


def report_plots(pred, group_labels: Sequence[str], train_counts: dict[str, int], out_dir,
                 smoothing: tuple[str, np.ndarray] | None = None, display_min: int = 100,
                 prefix: str = "") -> list[Path]:
    """ECDFs, histograms and (optionally) smoothed means against a continuous attribute.

    Subgroups with fewer than ``display_min`` training rows are left out of
    the figures; the CSV twins carry the same subset.
    """
    out_dir = Path(out_dir)
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(group_labels)
    shown = _shown(train_counts, display_min)
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    rows = []
    for g in shown:
        v = np.sort(pred[labels == g])
        if v.size == 0:
            continue
        xs, counts = np.unique(v, return_counts=True)
        ps = np.cumsum(counts) / v.size
        ax.step(xs, ps, where="post", label=g)
        rows += [{"subgroup": g, "x": a, "p": b} for a, b in zip(xs, ps)]
    ax.set_xlabel("prediction")
    ax.set_ylabel("ECDF")
    if shown:
        ax.legend(fontsize=6)
    fig.tight_layout()
    written += [_save(fig, out_dir / f"{prefix}ecdf.svg"),
                write_csv(out_dir / f"{prefix}ecdf.csv", rows, ("subgroup", "x", "p"))]

    edges = np.linspace(pred.min(), pred.max(), 21) if pred.size and np.ptp(pred) > 0 \
        else np.linspace(0, 1, 21)
    fig, ax = plt.subplots(figsize=(6, 4))
    rows = []
    for g in shown:
        v = pred[labels == g]
        if v.size == 0:
            continue
        dens, _ = np.histogram(v, bins=edges, density=True)
        ax.stairs(dens, edges, label=g)
        rows += [{"subgroup": g, "left": a, "right": b, "density": d}
                 for a, b, d in zip(edges[:-1], edges[1:], dens)]
    ax.set_xlabel("prediction")
    ax.set_ylabel("density")
    if shown:
        ax.legend(fontsize=6)
    fig.tight_layout()
    written += [_save(fig, out_dir / f"{prefix}histogram.svg"),
                write_csv(out_dir / f"{prefix}histogram.csv", rows,
                          ("subgroup", "left", "right", "density"))]

    if smoothing is not None:
        name, values = smoothing
        values = np.asarray(values, dtype=np.float64)
        fig, ax = plt.subplots(figsize=(6, 4))
        rows = []
        for g in shown:
            member = labels == g
            if member.sum() < 2:
                continue
            xs, fit = lowess(values[member], pred[member], frac=1.0)
            ax.plot(xs, fit, label=g)
            rows += [{"subgroup": g, name: a, "smoothed_mean": b} for a, b in zip(xs, fit)]
        ax.set_xlabel(name)
        ax.set_ylabel("mean prediction")
        if shown:
            ax.legend(fontsize=6)
        fig.tight_layout()
        written += [_save(fig, out_dir / f"{prefix}mean_vs_{name}.svg"),
                    write_csv(out_dir / f"{prefix}mean_vs_{name}.csv", rows,
                              ("subgroup", name, "smoothed_mean"))]
    return written

