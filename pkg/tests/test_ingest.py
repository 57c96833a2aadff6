import datetime as dt

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from countyflow.core import build_calendar
from countyflow.ingest import (
    CaseSeries,
    DemographicsRecord,
    DemographicsTable,
    IngestError,
    TripPanel,
    ValidationReport,
    cross_validate,
    load_cases,
    load_demographics,
    load_trips,
    write_trips,
)

D = dt.date
CAL = build_calendar(D(2020, 1, 6), D(2020, 1, 17))
DEMO_HEADER = "fips,population,pct_age65,pct_male,pct_african_american,median_income\n"


def write(path, text):
    path.write_text(text)
    return path


def test_minimal_trip_load(tmp_path):
    f = write(tmp_path / "t.csv", "date,origin_fips,destination_fips,trips\n2020-01-06,01001,01003,100\n")
    panel = load_trips([f], CAL)
    assert len(panel) == 1
    assert list(panel.records())[0].trips == 100.0


def test_saturday_row_dropped_and_counted(tmp_path):
    f = write(
        tmp_path / "t.csv",
        "date,origin_fips,destination_fips,trips\n2020-01-06,1001,1003,1\n2020-01-11,1001,1003,5\n",
    )
    report = ValidationReport()
    panel = load_trips([f], CAL, report)
    assert len(panel) == 1
    assert report.counts["trips"]["excluded_days"] == 1
    assert report.ok


def test_duplicate_is_fatal(tmp_path):
    f = write(
        tmp_path / "t.csv",
        "date,origin_fips,destination_fips,trips\n2020-01-06,1001,1003,5\n2020-01-06,1001,1003,7\n",
    )
    with pytest.raises(IngestError) as exc:
        load_trips([f], CAL)
    assert any(i.code == "duplicate" for i in exc.value.report.fatal)


@pytest.mark.parametrize(
    "row,code",
    [
        ("2020-01-06,1001,1001,5", "self_loop"),
        ("2020-01-06,1001,1003,-1", "negative_trips"),
        ("2020-13-06,1001,1003,1", "bad_date"),
        ("2020-01-06,abc,1003,1", "bad_fips"),
        ("2020-01-06,1001,1003,lots", "bad_number"),
    ],
)
def test_bad_trip_rows_name_the_line(tmp_path, row, code):
    f = write(tmp_path / "t.csv", "date,origin_fips,destination_fips,trips\n2020-01-07,1001,1005,1\n" + row + "\n")
    with pytest.raises(IngestError) as exc:
        load_trips([f], CAL)
    issue = next(i for i in exc.value.report.fatal if i.code == code)
    assert issue.location.endswith(":3")


def test_cases_passthrough_and_forward_fill(tmp_path):
    f = write(
        tmp_path / "c.csv",
        "date,fips,cumulative_cases\n2020-03-01,1001,0\n2020-03-02,1001,3\n"
        "2020-03-01,1003,2\n2020-03-03,1003,5\n",
    )
    report = ValidationReport()
    cases = load_cases(f, report)
    assert [cases.cumulative(1001, D(2020, 3, k)) for k in (1, 2, 3)] == [0, 3, 3]
    assert [cases.cumulative(1003, D(2020, 3, k)) for k in (1, 2, 3)] == [2, 2, 5]
    assert cases.cumulative(1003, D(2020, 2, 1)) == 0
    assert report.counts["cases"]["filled"] == 2


def test_decreasing_cases_warn(tmp_path):
    f = write(tmp_path / "c.csv", "date,fips,cumulative_cases\n2020-03-01,1001,5\n2020-03-02,1001,4\n")
    report = ValidationReport()
    cases = load_cases(f, report)
    assert cases.cumulative(1001, D(2020, 3, 2)) == 4
    assert [i.code for i in report.warnings] == ["decreasing_cumulative"]


def test_negative_cases_fatal(tmp_path):
    f = write(tmp_path / "c.csv", "date,fips,cumulative_cases\n2020-03-01,1001,-5\n")
    with pytest.raises(IngestError):
        load_cases(f)


def test_cases_extend_to_requested_end(tmp_path):
    f = write(tmp_path / "c.csv", "date,fips,cumulative_cases\n2020-03-01,1001,5\n")
    cases = load_cases(f, end=D(2020, 3, 10))
    assert cases.covers(D(2020, 3, 10)) and not cases.covers(D(2020, 3, 11))
    assert cases.cumulative(1001, D(2020, 3, 10)) == 5
    with pytest.raises(ValueError):
        cases.cumulative(1001, D(2020, 3, 11))


def test_demographics_valid_and_invalid(tmp_path):
    rows = "1001,1000,10,50,5,50000\n1003,2000,12,49,6,60000\n1005,3000,14,48,7,70000\n"
    assert len(load_demographics(write(tmp_path / "d.csv", DEMO_HEADER + rows))) == 3
    for bad in ("1001,0,10,50,5,50000\n", "1001,1000,10,150,5,50000\n", "1001,1000,10,50,5,50000\n1001,5,1,1,1,1\n"):
        with pytest.raises(IngestError):
            load_demographics(write(tmp_path / "bad.csv", DEMO_HEADER + bad))


def test_missing_file_is_fatal(tmp_path):
    with pytest.raises(IngestError) as exc:
        load_demographics(tmp_path / "nope.csv")
    assert exc.value.report.fatal[0].code == "missing_file"


def _demo(*fips):
    return DemographicsTable(DemographicsRecord(f, 1000, 10, 50, 5, 50000) for f in fips)


def _panel(rows):
    return TripPanel.from_arrays(CAL, *zip(*rows))


def test_cross_validate_rules():
    panel = _panel([(0, 1001, 1003, 10.0), (0, 1005, 1003, 1.0)])
    cases = CaseSeries.from_dict({1001: [1], 1003: [1], 1005: [1]}, D(2020, 1, 6))
    assert cross_validate(panel, cases, _demo(1001, 1003, 1005)).warnings == []
    report = cross_validate(panel, cases, _demo(1001, 1003))
    assert report.ok and "01005" in report.warnings[0].message
    report = cross_validate(_panel([(0, 1001, 1003, 1.0), (0, 1005, 1003, 9.0)]), cases, _demo(1001, 1003))
    assert not report.ok


records = st.lists(
    st.tuples(
        st.integers(0, len(CAL) - 1),
        st.integers(1001, 1010),
        st.integers(1001, 1010),
        st.one_of(st.integers(0, 10_000).map(float), st.floats(0, 1e6, allow_nan=False)),
    ),
    max_size=40,
    unique_by=lambda r: r[:3],
).map(lambda rs: [r for r in rs if r[1] != r[2]])


@settings(max_examples=40, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(records)
def test_round_trip_and_conservation(tmp_path, rows):
    panel = TripPanel.from_arrays(CAL, *zip(*rows)) if rows else TripPanel.from_arrays(CAL, [], [], [], [])
    path = tmp_path / "rt.csv"
    write_trips(panel, path)
    again = load_trips([path], CAL)
    assert again == panel
    assert again.total() == pytest.approx(sum(r[3] for r in rows), rel=1e-12, abs=0)


def test_panel_rejects_invariant_violations():
    with pytest.raises(ValueError):
        _panel([(0, 1001, 1001, 1.0)])
    with pytest.raises(ValueError):
        _panel([(0, 1001, 1003, -1.0)])
    with pytest.raises(ValueError):
        _panel([(0, 1001, 1003, 1.0), (0, 1001, 1003, 2.0)])
    p = _panel([(1, 1003, 1001, 1.0), (0, 1005, 1001, 2.0), (0, 1001, 1003, 3.0)])
    assert list(p.origin) == [1001, 1005, 1003]
    assert np.all(np.diff(p.day) >= 0)
