import csv

import numpy as np
import pytest

from trireserve.synthetic import PATTERNS, synthetic_corpus, synthetic_triangle


@pytest.fixture
def square_triangle():
    paid_pattern, adequacy = PATTERNS["medium"]
    premium = 1000.0 * 1.05 ** np.arange(10)
    return synthetic_triangle(7, paid_pattern, adequacy, premium, 0.7)


@pytest.fixture
def small_corpus():
    return synthetic_corpus(4, noise=0.05, seed=3)


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


@pytest.fixture
def long_csv(tmp_path):
    """Two companies, 10 accident years x 10 lags, default column names."""
    rows = []
    for company, scale in ((101, 1.0), (202, 3.0)):
        for r, ay in enumerate(range(1988, 1998)):
            premium = scale * (1000 + 10 * r)
            for lag in range(1, 11):
                paid = scale * (100 + 30 * lag + r)
                incurred = paid + scale * (200 - 20 * lag)
                rows.append([company, ay, lag, incurred, paid, premium])
    return write_rows(tmp_path / "data.csv",
                      ["company", "accident_year", "lag", "incurred", "paid", "premium"], rows)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
