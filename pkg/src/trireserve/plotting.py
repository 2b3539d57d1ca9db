"""Development-curve figures: one PNG per company with paid and outstanding panels."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "font.size": 8,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
KIND_STYLE = {
    "observed": dict(linestyle="-", marker="o", markersize=2.5),
    "actual": dict(linestyle=":", marker="o", markersize=2.5, alpha=0.6),
    "predicted": dict(linestyle="--", marker="x", markersize=3),
}


def save_fig(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no timestamp/software metadata so reruns are byte-identical
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_development(rows: Sequence[dict], path: str | Path, title: str = "") -> Path:
    """Plot rows produced by :func:`trireserve.reserving.development_curves`.

    Each accident year gets one colour; observed history is solid, held-out
    actuals dotted, forecasts dashed and joined to the last observed point.
    """
    with plt.rc_context(STYLE):
        fig, (ax_paid, ax_os) = plt.subplots(1, 2, figsize=(9, 3.6), sharex=True)
        years = sorted({r["accident_year"] for r in rows})
        cmap = plt.get_cmap("viridis", max(len(years), 2))
        for k, ay in enumerate(years):
            mine = [r for r in rows if r["accident_year"] == ay]
            observed = [r for r in mine if r["kind"] == "observed"]
            last = observed[-1:] if observed else []
            for kind, style in KIND_STYLE.items():
                pts = [r for r in mine if r["kind"] == kind]
                if not pts:
                    continue
                if kind != "observed":
                    pts = last + pts
                lags = [r["lag"] for r in pts]
                label = str(ay) if kind == "observed" else None
                ax_paid.plot(lags, [r["cumulative_paid_ratio"] for r in pts], color=cmap(k), label=label, **style)
                ax_os.plot(lags, [r["outstanding_ratio"] for r in pts], color=cmap(k), **style)
        ax_paid.set_title("Cumulative paid loss ratio")
        ax_os.set_title("Case outstanding ratio")
        for ax in (ax_paid, ax_os):
            ax.set_xlabel("Development year")
        ax_paid.legend(title="Accident year", ncol=2, frameon=False)
        if title:
            fig.suptitle(title)
        return save_fig(fig, path)
