import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import write_rows
from trireserve.errors import DataError, DuplicateRecordError, NormalizationError, SchemaError
from trireserve.triangles import (
    ColumnMap,
    Triangle,
    build_samples,
    dump_triangles_csv,
    incremental_from_cumulative,
    inference_inputs,
    ingest_csv,
    load_triangles,
)


class TestIncremental:
    def test_differencing(self):
        assert incremental_from_cumulative([100, 150, 165]).tolist() == [100, 50, 15]

    def test_constant(self):
        assert incremental_from_cumulative([80, 80, 80]).tolist() == [80, 0, 0]

    def test_negative_development_kept(self):
        assert incremental_from_cumulative([100, 95]).tolist() == [100, -5]

    @given(st.lists(st.integers(-10**9, 10**9), min_size=1, max_size=20))
    def test_round_trip(self, values):
        c = np.array(values, dtype=float)
        assert np.array_equal(np.cumsum(incremental_from_cumulative(c)), c)


class TestIngest:
    def test_counts_and_outstanding(self, long_csv):
        res = load_triangles(long_csv, "x")
        assert [t.company for t in res.triangles] == [101, 202]
        t = res.triangles[0]
        assert t.size == 10
        assert np.count_nonzero(~np.isnan(t.full_paid())) == 100
        assert res.records == 200
        full_os = t.full_incurred() - t.full_paid()
        assert full_os[0, 0] == pytest.approx(180.0)

    def test_outstanding_definition(self, tmp_path):
        rows = [[1, 1988 + r, lag, 500, 320, 1000] for r in range(2) for lag in (1, 2)]
        path = write_rows(tmp_path / "d.csv", ["company", "accident_year", "lag", "incurred", "paid", "premium"], rows)
        t = ingest_csv(path, "x")[0]
        assert t.outstanding()[0, 0] == 180.0

    def test_roster_order_and_missing(self, long_csv):
        res = load_triangles(long_csv, "x", roster=[202, 999, 101])
        assert [t.company for t in res.triangles] == [202, 101]
        assert res.exclusions == [("999", "not present in file")]

    def test_missing_column_named(self, long_csv, tmp_path):
        text = open(long_csv).read().replace("premium", "npe")
        bad = tmp_path / "bad.csv"
        bad.write_text(text)
        with pytest.raises(SchemaError, match="premium"):
            ingest_csv(bad, "x")

    def test_duplicate_record(self, long_csv):
        with open(long_csv, "a") as fh:
            fh.write("101,1990,3,1,1,1\n")
        with pytest.raises(DuplicateRecordError, match="company 101, accident year 1990, lag 3"):
            ingest_csv(long_csv, "x")

    def test_non_positive_premium_excluded(self, long_csv, tmp_path, caplog):
        lines = open(long_csv).read().splitlines()
        out = [lines[0]]
        for ln in lines[1:]:
            parts = ln.split(",")
            if parts[0] == "202" and parts[1] == "1993":
                parts[5] = "0"
            out.append(",".join(parts))
        path = tmp_path / "p.csv"
        path.write_text("\n".join(out) + "\n")
        res = load_triangles(path, "x")
        assert [t.company for t in res.triangles] == [101]
        assert res.exclusions == [("202", "non-positive net earned premium")]
        assert "202" in caplog.text

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(DataError, match="no records"):
            ingest_csv(path, "x")

    def test_header_only(self, tmp_path):
        path = write_rows(tmp_path / "h.csv", ["company", "accident_year", "lag", "incurred", "paid", "premium"], [])
        with pytest.raises(DataError, match="no records"):
            ingest_csv(path, "x")

    def test_cas_column_preset_and_line_filter(self, tmp_path):
        header = ["GRCODE", "AccidentYear", "DevelopmentLag", "IncurLoss_C", "CumPaidLoss_C", "EarnedPremNet_C"]
        rows = [[5, 1988 + r, lag, 90, 60, 100] for r in range(3) for lag in range(1, 4)]
        path = write_rows(tmp_path / "comauto_pos.csv", header, rows)
        t = ingest_csv(path, "comauto", ColumnMap.from_config("cas", "comauto"))[0]
        assert t.size == 3 and t.line == "comauto"
        mixed = write_rows(tmp_path / "m.csv", ["company", "accident_year", "lag", "incurred", "paid", "premium", "lob"],
                           [[1, 1988, 1, 2, 1, 5, "a"], [2, 1988, 1, 2, 1, 5, "b"]])
        cols = ColumnMap.from_config({"line": "lob"}, "a")
        assert [t.company for t in ingest_csv(mixed, "a", cols)] == [1]

    def test_bulk_column_subtracted(self, tmp_path):
        rows = [[1, 1988, 1, 500, 300, 1000, 50]]
        path = write_rows(tmp_path / "b.csv", ["company", "accident_year", "lag", "incurred", "paid", "premium", "bulk"], rows)
        t = ingest_csv(path, "x", ColumnMap(bulk="bulk"))[0]
        assert t.outstanding()[0, 0] == 150.0

    def test_holdout_not_visible_in_observed_arrays(self, long_csv):
        t = ingest_csv(long_csv, "x")[0]
        r, c = np.indices((10, 10))
        assert np.all(np.isnan(t.paid[r + c > 9]))
        assert not np.any(np.isnan(t.paid[r + c <= 9]))
        assert t.has_holdout

    def test_dump(self, long_csv, tmp_path):
        tris = ingest_csv(long_csv, "x")
        out = tmp_path / "dump.csv"
        dump_triangles_csv(tris, out)
        rows = list(csv.DictReader(open(out)))
        assert len(rows) == 200
        first = rows[0]
        assert first["company"] == "101" and first["lag"] == "1"
        assert float(first["paid_incremental"]) == 130.0
        assert float(first["outstanding"]) == 180.0
        assert sum(int(r["observed"]) for r in rows) == 110


def enumerate_cells(n):
    """Brute-force oracle: cells with a non-empty history and a non-empty response."""
    cells = []
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            observed = i + j <= n + 1
            history = list(range(1, j))
            response = list(range(j, n - i + 2))
            if observed and history and response:
                cells.append((i, j))
    return cells


class TestSamples:
    def test_count_matches_enumeration(self, square_triangle):
        samples = build_samples(square_triangle)
        expected = enumerate_cells(10)
        assert len(expected) == 45
        assert [(s.accident_year, s.lag) for s in samples] == expected

    def test_structure_of_cell_3_4(self, square_triangle):
        s = next(s for s in build_samples(square_triangle) if (s.accident_year, s.lag) == (3, 4))
        paid_ratio, os_ratio = square_triangle.loss_ratios()
        assert s.history_mask.tolist() == [False] * 6 + [True] * 3
        np.testing.assert_array_equal(s.history[6:, 0], paid_ratio[2, :3])
        assert s.response_mask.tolist() == [True] * 5 + [False] * 4
        np.testing.assert_array_equal(s.response[:5, 1], os_ratio[2, 3:8])

    def test_newest_year_has_no_samples(self, square_triangle):
        assert not [s for s in build_samples(square_triangle) if s.accident_year == 10]

    def test_ratio_definition(self):
        paid = np.array([[30.0, 40.0], [20.0, np.nan]])
        incurred = paid + np.array([[45.0, 5.0], [10.0, np.nan]])
        t = Triangle.from_square(1, "x", [2000, 2001], paid, incurred, [300.0, 100.0])
        p, o = t.loss_ratios()
        assert (p[0, 0], o[0, 0]) == pytest.approx((0.1, 0.15))

    def test_response_mask_counts(self, square_triangle):
        for s in build_samples(square_triangle):
            assert s.response_mask.sum() == 10 - s.accident_year + 1 - (s.lag - 1)
            assert s.history_mask.sum() == s.lag - 1

    def test_validation_split_all_rule(self, square_triangle):
        samples = build_samples(square_triangle, 1995)
        for s in samples:
            first_year = 1988 + s.accident_year - 1 + s.lag - 1
            assert (s.split == "validation") == (first_year > 1995)
        assert sum(s.split == "validation" for s in samples) == 17

    def test_validation_split_any_rule(self, square_triangle):
        samples = build_samples(square_triangle, 1995, rule="any")
        # the last response cell always sits on the 1997 diagonal
        assert all(s.split == "validation" for s in samples)
        samples = build_samples(square_triangle, 1997, rule="any")
        assert all(s.split == "train" for s in samples)

    def test_split_depends_only_on_cell(self, small_corpus):
        tags = [{(s.accident_year, s.lag): s.split for s in build_samples(t)} for t in small_corpus]
        assert all(tag == tags[0] for tag in tags)

    def test_premium_must_be_positive(self, square_triangle):
        bad = Triangle.from_square(1, "x", square_triangle.accident_years, square_triangle.full_paid(),
                                   square_triangle.full_incurred(), np.r_[0.0, square_triangle.premium[1:]])
        with pytest.raises(NormalizationError):
            build_samples(bad)

    def test_no_leakage(self, square_triangle):
        # poison every held-out cell; samples must not change
        poisoned = Triangle(square_triangle.company, "x", square_triangle.accident_years, square_triangle.paid,
                            square_triangle.incurred, square_triangle.premium,
                            square_triangle.holdout_paid * 1e9, square_triangle.holdout_incurred * 1e9)
        for a, b in zip(build_samples(square_triangle), build_samples(poisoned)):
            assert np.array_equal(a.history, b.history) and np.array_equal(a.response, b.response)
            assert np.all(np.isfinite(a.history)) and np.all(np.isfinite(a.response))


class TestInferenceInputs:
    def test_horizons(self, square_triangle):
        inputs = inference_inputs(square_triangle)
        assert [x.accident_year for x in inputs] == list(range(2, 11))
        by_year = {x.accident_year: x for x in inputs}
        assert by_year[2].history_mask.sum() == 9 and by_year[2].horizon == 1
        assert by_year[10].history_mask.sum() == 1 and by_year[10].horizon == 9
