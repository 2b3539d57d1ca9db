"""Ultimate losses, the chain-ladder baseline, development factors and metrics."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CoverageError, UndefinedFactorError
from .model import CompanyForecast, Forecast
from .triangles import Triangle

log = logging.getLogger(__name__)

# Published out-of-time results on the NAIC Schedule P subset, per line:
# model -> (MAPE, RMSPE). Only ODP/CIT/LIT are reported as published columns;
# Mack and DT are listed for comparison with recomputed values.
PUBLISHED = {
    "comauto": {"Mack": (0.060, 0.080), "ODP": (0.217, 0.822), "CIT": (0.052, 0.076),
                "LIT": (0.052, 0.074), "ML": (0.068, 0.096), "DT": (0.043, 0.057)},
    "othliab": {"Mack": (0.134, 0.202), "ODP": (0.223, 0.477), "CIT": (0.165, 0.220),
                "LIT": (0.152, 0.209), "ML": (0.142, 0.181), "DT": (0.109, 0.150)},
    "ppauto": {"Mack": (0.038, 0.061), "ODP": (0.039, 0.063), "CIT": (0.038, 0.057),
               "LIT": (0.040, 0.060), "ML": (0.036, 0.059), "DT": (0.025, 0.039)},
    "wkcomp": {"Mack": (0.053, 0.079), "ODP": (0.105, 0.368), "CIT": (0.054, 0.080),
               "LIT": (0.054, 0.080), "ML": (0.067, 0.099), "DT": (0.046, 0.067)},
}
PUBLISHED_COLUMNS = ("ODP", "CIT", "LIT")


@dataclass(frozen=True)
class UltimateLoss:
    company: int | str
    accident_year: int
    paid_to_date: float
    forecast_remaining: float

    @property
    def ultimate(self) -> float:
        return self.paid_to_date + self.forecast_remaining


def ultimate_losses(t: Triangle, f: Forecast | CompanyForecast) -> list[UltimateLoss]:
    """Paid to date plus forecast incremental paid through the last lag, per accident year."""
    cf = f[t.company] if isinstance(f, Forecast) else f
    incr = t.incremental_paid()
    fc = cf.paid
    n = t.size
    out = []
    for r in range(n):
        seen = n - r
        remaining = fc[r, seen:]
        if np.isnan(remaining).any():
            lag = seen + 1 + int(np.argmax(np.isnan(remaining)))
            raise CoverageError(
                f"company {t.company}: forecast missing for accident year {t.accident_years[r]}, lag {lag}"
            )
        out.append(UltimateLoss(t.company, t.accident_years[r], float(incr[r, :seen].sum()), float(remaining.sum())))
    return out


def actual_ultimates(t: Triangle) -> list[UltimateLoss]:
    """Realized ultimates from the held-out cells (cumulative paid at the last lag)."""
    full = t.full_paid()
    latest = t.latest_paid()
    out = []
    for r in range(t.size):
        if np.isnan(full[r, -1]):
            raise CoverageError(f"company {t.company}: no actual at accident year {t.accident_years[r]}, last lag")
        out.append(UltimateLoss(t.company, t.accident_years[r], float(latest[r]), float(full[r, -1] - latest[r])))
    return out


def chain_ladder_factors(paid: np.ndarray) -> np.ndarray:
    """Volume-weighted age-to-age factors from a cumulative triangle (NaN = unobserved)."""
    n = paid.shape[1]
    factors = np.empty(n - 1)
    for c in range(n - 1):
        both = ~np.isnan(paid[:, c]) & ~np.isnan(paid[:, c + 1])
        base = paid[both, c].sum()
        if not both.any() or base == 0:
            raise UndefinedFactorError(f"development factor {c + 1}->{c + 2} undefined (zero base)")
        factors[c] = paid[both, c + 1].sum() / base
    return factors


def mack_point_estimate(t: Triangle) -> CompanyForecast:
    """Chain-ladder projection of the unobserved cells, as incremental paid."""
    n = t.size
    pr = np.full((n, n), np.nan)
    if n > 1:
        f = chain_ladder_factors(t.paid)
        for r in range(1, n):
            seen = n - r
            cum = t.paid[r, seen - 1]
            for c in range(seen, n):
                nxt = cum * f[c - 1]
                pr[r, c] = nxt - cum
                cum = nxt
        pr /= t.premium[:, None]
    return CompanyForecast(t.company, t.premium.copy(), pr, np.full((n, n), np.nan))


def mack_forecast(triangles: Iterable[Triangle]) -> Forecast:
    out = Forecast("Mack")
    for t in triangles:
        out.companies[t.company] = mack_point_estimate(t)
    return out


@dataclass
class LdfTable:
    """Per-row age-to-age factors; ``factors[r, c]`` is lag ``c+1 -> c+2``. NaN marks an undefined factor."""

    company: int | str
    factors: np.ndarray
    undefined: list[tuple[int, int]] = field(default_factory=list)


def ldf_from_forecast(t: Triangle, f: Forecast | CompanyForecast) -> LdfTable:
    cf = f[t.company] if isinstance(f, Forecast) else f
    n = t.size
    path = np.where(np.isnan(t.paid), 0.0, t.paid)
    fc = cf.paid
    for r in range(1, n):
        seen = n - r
        path[r, seen:] = t.paid[r, seen - 1] + np.cumsum(fc[r, seen:])
    factors = np.full((n, n - 1), np.nan)
    undefined = []
    for r in range(n):
        for c in range(n - 1):
            if path[r, c] == 0:
                undefined.append((t.accident_years[r], c + 1))
            else:
                factors[r, c] = path[r, c + 1] / path[r, c]
    return LdfTable(t.company, factors, undefined)


# --- metrics ---------------------------------------------------------------


@dataclass(frozen=True)
class CompanyResult:
    company: int | str
    predicted: float
    actual: float

    @property
    def pct_error(self) -> float:
        return (self.predicted - self.actual) / self.actual


@dataclass
class EvaluationReport:
    line: str
    model: str
    mape: float
    rmspe: float
    companies: list[CompanyResult]
    excluded: list = field(default_factory=list)


def evaluate(
    predicted: Sequence[UltimateLoss],
    actual: Sequence[UltimateLoss],
    roster: Sequence,
    line: str = "",
    model: str = "",
) -> EvaluationReport:
    """MAPE and RMSPE over companies of ultimates summed across accident years."""
    pred_tot: dict = {}
    act_tot: dict = {}
    for u in predicted:
        pred_tot[u.company] = pred_tot.get(u.company, 0.0) + u.ultimate
    for u in actual:
        act_tot[u.company] = act_tot.get(u.company, 0.0) + u.ultimate
    results = []
    excluded = []
    for c in roster:
        if c not in pred_tot or c not in act_tot:
            raise CoverageError(f"company {c} missing from {'predictions' if c not in pred_tot else 'actuals'}")
        if act_tot[c] == 0:
            log.warning("company %s: zero actual ultimate, excluded from %s metrics", c, line)
            excluded.append(c)
            continue
        results.append(CompanyResult(c, pred_tot[c], act_tot[c]))
    if not results:
        raise CoverageError("no company left to evaluate")
    errs = [r.pct_error for r in results]
    mape = sum(abs(e) for e in errs) / len(errs)
    rmspe = math.sqrt(sum(e * e for e in errs) / len(errs))
    return EvaluationReport(line, model, mape, rmspe, results, excluded)


def evaluate_forecast(triangles: Sequence[Triangle], f: Forecast, line: str) -> EvaluationReport:
    predicted = [u for t in triangles for u in ultimate_losses(t, f)]
    actual = [u for t in triangles for u in actual_ultimates(t)]
    return evaluate(predicted, actual, [t.company for t in triangles], line, f.label)


# --- report files -------------------------------------------------------------


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def write_metrics_csv(reports: Sequence[EvaluationReport], path: str | Path, published: bool = True) -> None:
    """One row per line x model x metric, computed rows first, then published constants."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["line", "model", "metric", "value", "companies", "source"])
        lines = []
        for rep in reports:
            if rep.line not in lines:
                lines.append(rep.line)
            n = len(rep.companies)
            w.writerow([rep.line, rep.model, "MAPE", _fmt(rep.mape), n, "computed"])
            w.writerow([rep.line, rep.model, "RMSPE", _fmt(rep.rmspe), n, "computed"])
        if published:
            for line in lines:
                for model in PUBLISHED_COLUMNS:
                    if line in PUBLISHED:
                        mape, rmspe = PUBLISHED[line][model]
                        w.writerow([line, model, "MAPE", mape, "", "published"])
                        w.writerow([line, model, "RMSPE", rmspe, "", "published"])


def write_company_detail_csv(reports: Sequence[EvaluationReport], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["line", "model", "company", "predicted_ultimate", "actual_ultimate", "pct_error"])
        for rep in reports:
            for c in rep.companies:
                w.writerow([rep.line, rep.model, c.company, _fmt(c.predicted), _fmt(c.actual), _fmt(c.pct_error)])
            for c in rep.excluded:
                w.writerow([rep.line, rep.model, c, "", "0.0", ""])


CURVE_FIELDS = [
    "line", "model", "company", "accident_year", "lag", "kind",
    "cumulative_paid_ratio", "outstanding_ratio",
]


def development_curves(t: Triangle, f: Forecast | CompanyForecast, model: str = "") -> list[dict]:
    """Cumulative paid and outstanding loss ratios by accident year and lag.

    ``kind`` is ``observed`` (up to the diagonal), ``actual`` (held-out
    cells, when present) or ``predicted`` (forecast cells).
    """
    cf = f[t.company] if isinstance(f, Forecast) else f
    n = t.size
    npe = t.premium[:, None]
    rows = []

    def add(r, c, kind, cum_paid, os):
        rows.append({
            "line": t.line, "model": model, "company": t.company,
            "accident_year": t.accident_years[r], "lag": c + 1, "kind": kind,
            "cumulative_paid_ratio": cum_paid, "outstanding_ratio": os,
        })

    obs_paid = t.paid / npe
    obs_os = t.outstanding() / npe
    full_paid = full_os = None
    if t.has_holdout:
        full_paid = t.full_paid() / npe
        full_os = (t.full_incurred() - t.full_paid()) / npe
    for r in range(n):
        seen = n - r
        for c in range(seen):
            add(r, c, "observed", obs_paid[r, c], obs_os[r, c])
        if full_paid is not None:
            for c in range(seen, n):
                add(r, c, "actual", full_paid[r, c], full_os[r, c])
        cum = obs_paid[r, seen - 1]
        for c in range(seen, n):
            cum = cum + cf.paid_ratio[r, c]
            add(r, c, "predicted", cum, cf.os_ratio[r, c])
    return rows


def write_development_curves_csv(rows: Sequence[dict], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_FIELDS)
        for row in rows:
            w.writerow([
                _fmt(row[k]) if k in ("cumulative_paid_ratio", "outstanding_ratio") else row[k]
                for k in CURVE_FIELDS
            ])
