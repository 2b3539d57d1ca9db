"""Development triangles, CSV ingestion and training-sample construction.

Indices follow actuarial convention in the public API: accident-year index
``i`` and development lag ``j`` are 1-based, and at the valuation date the
observed cells are those with ``i + j <= I + 1``. Internally arrays are
0-based ``[row, lag]``.

Cells past the valuation diagonal (the held-out actuals) live in separate
``holdout_*`` arrays so nothing that builds training inputs can see them.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DataError, DuplicateRecordError, NormalizationError, SchemaError

log = logging.getLogger(__name__)

REQUIRED_FIELDS = ("company", "accident_year", "lag", "incurred", "paid", "premium")

# column suffixes used by the per-line CAS Schedule P files
CAS_SUFFIXES = {
    "comauto": "_C",
    "ppauto": "_B",
    "wkcomp": "_D",
    "othliab": "_h1",
    "medmal": "_F2",
    "prodliab": "_R1",
}


@dataclass(frozen=True)
class ColumnMap:
    """Physical CSV column names for each logical field.

    ``line`` is optional; when given, rows are filtered on it. ``bulk`` is
    optional; when given it is subtracted from incurred before deriving
    case outstanding.
    """

    company: str = "company"
    accident_year: str = "accident_year"
    lag: str = "lag"
    incurred: str = "incurred"
    paid: str = "paid"
    premium: str = "premium"
    line: str | None = None
    bulk: str | None = None

    @classmethod
    def cas(cls, line: str) -> ColumnMap:
        try:
            sfx = CAS_SUFFIXES[line]
        except KeyError:
            raise SchemaError(f"no CAS column preset for line {line!r}") from None
        return cls(
            company="GRCODE",
            accident_year="AccidentYear",
            lag="DevelopmentLag",
            incurred=f"IncurLoss{sfx}",
            paid=f"CumPaidLoss{sfx}",
            premium=f"EarnedPremNet{sfx}",
        )

    @classmethod
    def from_config(cls, spec, line: str) -> ColumnMap:
        if spec is None:
            return cls()
        if isinstance(spec, str):
            if spec == "cas":
                return cls.cas(line)
            raise SchemaError(f"unknown column preset {spec!r}")
        known = set(cls.__dataclass_fields__)
        unknown = set(spec) - known
        if unknown:
            raise SchemaError(f"unknown column mapping keys: {sorted(unknown)}")
        return cls(**spec)


@dataclass(frozen=True, eq=False)
class Triangle:
    """One company's triangle in one line of business.

    ``paid`` and ``incurred`` are cumulative, ``I x I``, NaN outside the
    observed region. ``holdout_paid``/``holdout_incurred`` carry the cells
    past the diagonal when the source file has them (NaN elsewhere).
    """

    company: int | str
    line: str
    accident_years: tuple[int, ...]
    paid: np.ndarray
    incurred: np.ndarray
    premium: np.ndarray
    holdout_paid: np.ndarray | None = None
    holdout_incurred: np.ndarray | None = None

    @classmethod
    def from_square(cls, company, line, accident_years, paid, incurred, premium) -> Triangle:
        """Split full ``I x I`` cumulative arrays at the valuation diagonal."""
        paid = np.array(paid, dtype=np.float64)
        incurred = np.array(incurred, dtype=np.float64)
        n = len(accident_years)
        if paid.shape != (n, n) or incurred.shape != (n, n):
            raise ContractError(f"expected {n}x{n} arrays, got {paid.shape} and {incurred.shape}")
        obs = observed_mask(n)
        return cls(
            company,
            line,
            tuple(int(y) for y in accident_years),
            np.where(obs, paid, np.nan),
            np.where(obs, incurred, np.nan),
            np.array(premium, dtype=np.float64),
            np.where(obs, np.nan, paid),
            np.where(obs, np.nan, incurred),
        )

    @property
    def size(self) -> int:
        return len(self.accident_years)

    @property
    def valuation_year(self) -> int:
        return self.accident_years[-1]

    def calendar_year(self, i: int, j: int) -> int:
        """Calendar year of 1-based cell ``(i, j)``."""
        return self.accident_years[i - 1] + j - 1

    def outstanding(self) -> np.ndarray:
        return self.incurred - self.paid

    def incremental_paid(self) -> np.ndarray:
        out = np.full_like(self.paid, np.nan)
        for r in range(self.size):
            n = self.size - r
            out[r, :n] = incremental_from_cumulative(self.paid[r, :n])
        return out

    def loss_ratios(self) -> tuple[np.ndarray, np.ndarray]:
        """Incremental paid and outstanding, each divided by the row's premium."""
        if np.any(self.premium <= 0):
            raise NormalizationError(f"company {self.company}: non-positive premium")
        npe = self.premium[:, None]
        return self.incremental_paid() / npe, self.outstanding() / npe

    def latest_paid(self) -> np.ndarray:
        """Cumulative paid on the valuation diagonal, per accident year."""
        n = self.size
        return np.array([self.paid[r, n - 1 - r] for r in range(n)])

    def full_paid(self) -> np.ndarray:
        if self.holdout_paid is None:
            raise DataError(f"company {self.company}: no held-out cells available")
        return np.where(np.isnan(self.paid), self.holdout_paid, self.paid)

    def full_incurred(self) -> np.ndarray:
        if self.holdout_incurred is None:
            raise DataError(f"company {self.company}: no held-out cells available")
        return np.where(np.isnan(self.incurred), self.holdout_incurred, self.incurred)

    @property
    def has_holdout(self) -> bool:
        return self.holdout_paid is not None and not np.isnan(self.holdout_paid[1:, -1]).any()


def observed_mask(n: int) -> np.ndarray:
    r, c = np.indices((n, n))
    return r + c <= n - 1


def incremental_from_cumulative(cumulative: Sequence[float]) -> np.ndarray:
    c = np.asarray(cumulative, dtype=np.float64)
    if c.size == 0:
        raise ContractError("incremental_from_cumulative needs a non-empty sequence")
    out = c.copy()
    out[1:] = c[1:] - c[:-1]
    return out


# --- ingestion -------------------------------------------------------------


@dataclass
class IngestResult:
    triangles: list[Triangle]
    exclusions: list[tuple[str, str]] = field(default_factory=list)
    records: int = 0


def _number(row: dict, col: str, lineno: int, path) -> float:
    raw = row[col]
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise DataError(f"{path}:{lineno}: column {col!r} is not numeric: {raw!r}") from None


def _integer(row: dict, col: str, lineno: int, path) -> int:
    value = _number(row, col, lineno, path)
    if value != int(value):
        raise DataError(f"{path}:{lineno}: column {col!r} is not an integer: {row[col]!r}")
    return int(value)


def load_triangles(
    path: str | Path,
    line: str,
    columns: ColumnMap | None = None,
    roster: Iterable | None = None,
) -> IngestResult:
    """Read a long-format CSV (one row per company/accident year/lag).

    Companies are returned in roster order, or sorted by code when no roster
    is given. Companies with a non-positive premium or a hole in the
    observed region are dropped and listed in ``exclusions``.
    """
    columns = columns or ColumnMap()
    path = Path(path)
    cells: dict[tuple, tuple[float, float, float]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: no records (empty file)")
        header = set(reader.fieldnames)
        needed = [getattr(columns, f) for f in REQUIRED_FIELDS]
        needed += [c for c in (columns.line, columns.bulk) if c]
        for col in needed:
            if col not in header:
                raise SchemaError(f"{path}: missing required column {col!r}")
        for lineno, row in enumerate(reader, start=2):
            if columns.line and row[columns.line] != line:
                continue
            company = _integer(row, columns.company, lineno, path)
            ay = _integer(row, columns.accident_year, lineno, path)
            lag = _integer(row, columns.lag, lineno, path)
            if lag < 1:
                raise DataError(f"{path}:{lineno}: development lag must be >= 1, got {lag}")
            key = (company, ay, lag)
            if key in cells:
                raise DuplicateRecordError(
                    f"{path}:{lineno}: duplicate record for company {company}, accident year {ay}, lag {lag}"
                )
            incurred = _number(row, columns.incurred, lineno, path)
            if columns.bulk:
                incurred -= _number(row, columns.bulk, lineno, path)
            cells[key] = (
                _number(row, columns.paid, lineno, path),
                incurred,
                _number(row, columns.premium, lineno, path),
            )
    if not cells:
        raise DataError(f"{path}: no records for line {line!r}")

    years = sorted({ay for _, ay, _ in cells})
    n = len(years)
    if years != list(range(years[0], years[0] + n)):
        raise DataError(f"{path}: accident years are not consecutive: {years}")
    by_company: dict[int, list] = {}
    for (company, ay, lag), value in cells.items():
        by_company.setdefault(company, []).append((ay, lag, value))

    if roster is None:
        order = sorted(by_company)
    else:
        order = [int(c) for c in roster]
    result = IngestResult([], [], len(cells))
    obs = observed_mask(n)
    for company in order:
        if company not in by_company:
            result.exclusions.append((str(company), "not present in file"))
            log.warning("company %s: not present in %s", company, path)
            continue
        paid = np.full((n, n), np.nan)
        incurred = np.full((n, n), np.nan)
        premium = np.full(n, np.nan)
        for ay, lag, (p, inc, npe) in by_company[company]:
            r, c = ay - years[0], lag - 1
            if c >= n:
                continue
            paid[r, c] = p
            incurred[r, c] = inc
            premium[r] = npe
        if np.isnan(paid[obs]).any() or np.isnan(incurred[obs]).any() or np.isnan(premium).any():
            result.exclusions.append((str(company), "missing cells in the observed region"))
            log.warning("company %s: missing cells in the observed region, excluded", company)
            continue
        if np.any(premium <= 0):
            result.exclusions.append((str(company), "non-positive net earned premium"))
            log.warning("company %s: non-positive net earned premium, excluded", company)
            continue
        result.triangles.append(Triangle.from_square(company, line, years, paid, incurred, premium))
    return result


def ingest_csv(path, line: str, columns: ColumnMap | None = None, roster: Iterable | None = None) -> list[Triangle]:
    return load_triangles(path, line, columns, roster).triangles


def dump_triangles_csv(triangles: Sequence[Triangle], path: str | Path) -> None:
    """Canonical per-cell audit dump, observed and held-out cells alike."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["company", "line", "accident_year", "lag", "paid_incremental", "outstanding", "premium", "observed"])
        for t in triangles:
            n = t.size
            if t.holdout_paid is not None:
                paid, incurred = t.full_paid(), t.full_incurred()
            else:
                paid, incurred = t.paid, t.incurred
            obs = observed_mask(n)
            for r in range(n):
                row_paid = paid[r]
                for c in range(n):
                    if np.isnan(row_paid[c]):
                        continue
                    incr = row_paid[c] - (row_paid[c - 1] if c else 0.0)
                    w.writerow([
                        t.company, t.line, t.accident_years[r], c + 1,
                        repr(float(incr)), repr(float(incurred[r, c] - row_paid[c])),
                        repr(float(t.premium[r])), int(obs[r, c]),
                    ])


# --- samples ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Sample:
    """One training record for cell ``(i, j)``.

    ``history`` holds ``(Y_1 .. Y_{j-1})`` left-padded to ``I - 1`` steps;
    ``response`` holds ``(Y_j .. Y_{I-i+1})`` right-padded to ``I - 1`` steps.
    Each step is a (paid, outstanding) loss-ratio pair.
    """

    company: int | str
    company_index: int
    accident_year: int
    lag: int
    history: np.ndarray
    history_mask: np.ndarray
    response: np.ndarray
    response_mask: np.ndarray
    split: str


@dataclass(frozen=True, eq=False)
class InferenceInput:
    company: int | str
    company_index: int
    accident_year: int
    history: np.ndarray
    history_mask: np.ndarray

    @property
    def horizon(self) -> int:
        """Number of development years still to forecast."""
        return len(self.history_mask) + 1 - int(self.history_mask.sum())


def _pairs(paid_ratio: np.ndarray, os_ratio: np.ndarray, r: int, lo: int, hi: int) -> np.ndarray:
    return np.stack([paid_ratio[r, lo:hi], os_ratio[r, lo:hi]], axis=1)


def build_samples(
    t: Triangle,
    validation_after_year: int = 1995,
    company_index: int = 0,
    rule: str = "all",
) -> list[Sample]:
    """Every cell with a non-empty history and non-empty response.

    A sample is tagged ``validation`` when all (``rule="all"``) or any
    (``rule="any"``) of its response cells fall in a calendar year after
    ``validation_after_year``.
    """
    if rule not in ("all", "any"):
        raise ContractError(f"validation rule must be 'all' or 'any', got {rule!r}")
    paid_ratio, os_ratio = t.loss_ratios()
    n = t.size
    steps = n - 1
    out = []
    for i in range(1, n):
        last = n - i + 1
        for j in range(2, last + 1):
            r = i - 1
            history = np.zeros((steps, 2))
            hmask = np.zeros(steps, dtype=bool)
            hist = _pairs(paid_ratio, os_ratio, r, 0, j - 1)
            history[steps - len(hist):] = hist
            hmask[steps - len(hist):] = True
            response = np.zeros((steps, 2))
            rmask = np.zeros(steps, dtype=bool)
            resp = _pairs(paid_ratio, os_ratio, r, j - 1, last)
            response[: len(resp)] = resp
            rmask[: len(resp)] = True
            years = [t.calendar_year(i, k) for k in range(j, last + 1)]
            late = [y > validation_after_year for y in years]
            is_val = all(late) if rule == "all" else any(late)
            out.append(Sample(
                t.company, company_index, i, j,
                history, hmask, response, rmask,
                "validation" if is_val else "train",
            ))
    return out


def inference_inputs(t: Triangle, company_index: int = 0) -> list[InferenceInput]:
    """Full observed history of every accident year that still needs a forecast."""
    paid_ratio, os_ratio = t.loss_ratios()
    n = t.size
    steps = n - 1
    out = []
    for i in range(2, n + 1):
        hist = _pairs(paid_ratio, os_ratio, i - 1, 0, n - i + 1)
        history = np.zeros((steps, 2))
        hmask = np.zeros(steps, dtype=bool)
        history[steps - len(hist):] = hist
        hmask[steps - len(hist):] = True
        out.append(InferenceInput(t.company, company_index, i, history, hmask))
    return out
