"""Static figures from experiment CSVs."""

from __future__ import annotations

import csv
from pathlib import Path


def plot_csv(path, x: str, y: str, out, err: str | None = None, logy: bool = False) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or x not in rows[0] or y not in rows[0]:
        raise ValueError(f"columns {x!r}/{y!r} not found in {path}")
    xs = [float(r[x]) for r in rows]
    ys = [float(r[y]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if err:
        ax.errorbar(xs, ys, yerr=[float(r[err]) for r in rows], fmt="o-", capsize=3)
    else:
        ax.plot(xs, ys, "o-")
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    if logy:
        ax.set_yscale("log")
    fig.tight_layout()
    out = Path(out)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
