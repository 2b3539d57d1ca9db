"""Synthetic Schedule P-like corpora with known development patterns."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .triangles import ColumnMap, Triangle

# cumulative share of ultimate paid by lag, and case-reserve adequacy
# (outstanding as a share of the true unpaid amount) by lag
PATTERNS = {
    "short": (
        np.array([0.45, 0.72, 0.85, 0.92, 0.96, 0.98, 0.99, 0.995, 0.998, 1.0]),
        np.array([0.80, 0.90, 0.95, 0.97, 0.98, 0.99, 1.0, 1.0, 1.0, 1.0]),
    ),
    "medium": (
        np.array([0.25, 0.50, 0.67, 0.79, 0.87, 0.92, 0.955, 0.975, 0.99, 1.0]),
        np.array([0.70, 0.82, 0.90, 0.94, 0.96, 0.98, 0.99, 1.0, 1.0, 1.0]),
    ),
    "long": (
        np.array([0.10, 0.25, 0.40, 0.54, 0.66, 0.76, 0.84, 0.91, 0.96, 1.0]),
        np.array([0.55, 0.65, 0.75, 0.82, 0.88, 0.92, 0.95, 0.97, 0.99, 1.0]),
    ),
}


def synthetic_triangle(
    company,
    paid_pattern: Sequence[float],
    adequacy: Sequence[float],
    premium: Sequence[float],
    loss_ratio: Sequence[float] | float,
    noise: float = 0.0,
    rng: np.random.Generator | None = None,
    line: str = "synthetic",
    first_year: int = 1988,
) -> Triangle:
    """A full square whose incremental paid cells follow ``paid_pattern``.

    With ``noise > 0`` every incremental paid and outstanding cell is scaled
    by an independent lognormal factor with that log-standard deviation.
    """
    pattern = np.asarray(paid_pattern, dtype=np.float64)
    n = pattern.size
    premium = np.asarray(premium, dtype=np.float64)
    ult = premium * np.broadcast_to(np.asarray(loss_ratio, dtype=np.float64), (n,))
    incr = ult[:, None] * np.diff(pattern, prepend=0.0)[None, :]
    if noise:
        incr = incr * np.exp(rng.normal(0.0, noise, size=incr.shape))
    paid = np.cumsum(incr, axis=1)
    final = paid[:, -1:]
    os = np.maximum(final - paid, 0.0) * np.asarray(adequacy)[None, :]
    if noise:
        os = os * np.exp(rng.normal(0.0, noise, size=os.shape))
    return Triangle.from_square(company, line, range(first_year, first_year + n), paid, paid + os, premium)


def synthetic_corpus(
    n_companies: int = 20,
    noise: float = 0.05,
    seed: int = 0,
    patterns: Sequence[str] = ("short", "medium", "long"),
    line: str = "synthetic",
) -> list[Triangle]:
    """Companies assigned round-robin to latent patterns, with random size and loss ratio."""
    rng = np.random.default_rng(seed)
    out = []
    for c in range(n_companies):
        paid_pattern, adequacy = PATTERNS[patterns[c % len(patterns)]]
        scale = 10 ** rng.uniform(3, 5)
        premium = scale * 1.04 ** np.arange(paid_pattern.size)
        elr = rng.uniform(0.55, 0.85)
        lr = elr * np.exp(rng.normal(0.0, noise, size=paid_pattern.size)) if noise else elr
        out.append(synthetic_triangle(1000 + c, paid_pattern, adequacy, premium, lr, noise, rng, line))
    return out


def write_long_csv(triangles: Sequence[Triangle], path: str | Path, columns: ColumnMap | None = None) -> None:
    """Write full squares in the long format :func:`~trireserve.triangles.load_triangles` reads."""
    columns = columns or ColumnMap()
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([columns.company, columns.accident_year, columns.lag, columns.incurred, columns.paid,
                    columns.premium])
        for t in triangles:
            paid = t.full_paid() if t.holdout_paid is not None else t.paid
            incurred = t.full_incurred() if t.holdout_incurred is not None else t.incurred
            for r, ay in enumerate(t.accident_years):
                for c in range(t.size):
                    if np.isnan(paid[r, c]):
                        continue
                    w.writerow([t.company, ay, c + 1, repr(float(incurred[r, c])), repr(float(paid[r, c])),
                                repr(float(t.premium[r]))])
