import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aexplain.errors import EmptyInput, MalformedRow, NonMonotonicTime
from aexplain.series import (
    Sequence,
    SeriesBundle,
    full_interval,
    parse_series,
    serialize_series,
    slice_window,
    validate_series,
)

CSV = "timestamp,a,b\n1000,1.0,2.0\n2000,1.5,2.5\n3000,2.0,3.0\n4000,2.5,3.5\n5000,3.0,4.0\n"


def test_parse_basic_shape():
    b = parse_series(CSV)
    assert b.M == 2
    assert [len(s) for s in b.sequences.values()] == [5, 5]
    assert b.time_axis.tolist() == [1000, 2000, 3000, 4000, 5000]


def test_parse_bytes_and_path(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text(CSV, encoding="utf-8")
    assert parse_series(str(p)) == parse_series(CSV.encode())


def test_duplicate_timestamp_reports_row():
    text = "timestamp,a\n1,0\n2,0\n2,1\n"
    with pytest.raises(NonMonotonicTime) as ei:
        parse_series(text)
    assert ei.value.row == 3


def test_decreasing_timestamp():
    with pytest.raises(NonMonotonicTime):
        parse_series("timestamp,a\n5,0\n4,0\n")


def test_nan_value_is_malformed_row():
    rows = "".join(f"{i},{'NaN' if i == 7 else i}\n" for i in range(1, 10))
    with pytest.raises(MalformedRow) as ei:
        parse_series("timestamp,a\n" + rows)
    assert ei.value.row == 7


@pytest.mark.parametrize("cell", ["inf", "-inf", "abc"])
def test_non_numeric_or_infinite(cell):
    with pytest.raises(MalformedRow):
        parse_series(f"timestamp,a\n1,{cell}\n")


def test_empty_input():
    with pytest.raises(EmptyInput):
        parse_series("")
    with pytest.raises(EmptyInput):
        parse_series("timestamp\n1\n")


def test_mixed_timestamp_formats_rejected():
    with pytest.raises(MalformedRow):
        parse_series("timestamp,a\n2024-01-01T00:00:00Z,1\n1704067260000,2\n")


def test_iso_timestamps_as_ms():
    b = parse_series("timestamp,a\n2024-01-01T00:00:00Z,1\n2024-01-01T00:01:00+00:00,2\n")
    assert b.time_axis.tolist() == [1704067200000, 1704067260000]


def test_missing_cells_are_absent_not_filled():
    b = parse_series("timestamp,a,b\n1,1.0,\n2,,2.0\n3,3.0,3.0\n")
    assert b.sequences["a"].t.tolist() == [1, 3]
    assert b.sequences["b"].t.tolist() == [2, 3]
    assert np.isnan(b.matrix[0, 1]) and np.isnan(b.matrix[1, 0])


def test_schema_renames_and_drops():
    b = parse_series(CSV, schema={"b": "pressure"})
    assert b.sensors == ("pressure",)
    with pytest.raises(MalformedRow):
        parse_series(CSV, schema={"zz": "x"})


def test_quoted_fields():
    b = parse_series('timestamp,"a,1"\n1,"2.5"\n')
    assert b.sensors == ("a,1",)
    assert b.sequences["a,1"].x.tolist() == [2.5]


def test_slice_first_two():
    b = parse_series(CSV)
    s = slice_window(b, (1000, 2000))
    assert all(len(q) == 2 for q in s.sequences.values())
    assert s.sensors == b.sensors


def test_slice_full_is_identity():
    b = parse_series(CSV)
    assert slice_window(b, full_interval(b)) == b


def test_slice_beyond_end_is_flagged_empty():
    b = parse_series(CSV)
    s = slice_window(b, (9000, 10000))
    assert s.empty
    assert s.sensors == b.sensors
    assert all(len(q) == 0 for q in s.sequences.values())


def test_slice_rejects_reversed_interval():
    with pytest.raises(ValueError):
        slice_window(parse_series(CSV), (5, 1))


def test_validate_clean_bundle():
    rep = validate_series(parse_series(CSV))
    assert rep.ok and rep.defects == []
    assert [s.N for s in rep.sequences] == [5, 5]
    assert rep.sequences[0].min == 1.0 and rep.sequences[0].max == 3.0


def test_validate_empty_sequence():
    b = SeriesBundle("eq", {"a": Sequence("a", [], [])}, np.array([], dtype=np.int64))
    assert any("empty sequence" in d for d in validate_series(b).defects)


def test_validate_axis_mismatch():
    b = SeriesBundle("eq", {"a": Sequence("a", [1, 2, 7], [0.0, 0.0, 0.0])}, np.array([1, 2, 3]))
    rep = validate_series(b)
    assert any("axis mismatch" in d for d in rep.defects)


def test_validate_does_not_mutate():
    b = parse_series(CSV)
    before = b.matrix.copy()
    validate_series(b)
    assert np.array_equal(before, b.matrix)


# -- properties ---------------------------------------------------------------------

values = st.floats(min_value=-1e9, max_value=1e9, allow_nan=False, allow_infinity=False)


@st.composite
def bundles(draw):
    n = draw(st.integers(1, 30))
    m = draw(st.integers(1, 4))
    steps = draw(st.lists(st.integers(1, 10_000), min_size=n, max_size=n))
    t = np.cumsum(steps) + draw(st.integers(0, 10**12))
    x = np.array(draw(st.lists(st.lists(values, min_size=m, max_size=m), min_size=n, max_size=n)))
    return SeriesBundle.from_matrix(t, x, [f"s{j}" for j in range(m)])


@given(bundles())
def test_roundtrip_serialize_parse(b):
    back = parse_series(serialize_series(b))
    assert np.array_equal(back.time_axis, b.time_axis)
    assert np.array_equal(back.matrix, b.matrix)


@given(bundles(), st.data())
def test_slice_idempotent(b, data):
    lo, hi = full_interval(b)
    a = data.draw(st.integers(lo - 5, hi + 5))
    c = data.draw(st.integers(a, hi + 10))
    once = slice_window(b, (a, c))
    assert slice_window(once, (a, c)) == once
    assert slice_window(b, full_interval(b)) == b
