import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aexplain.constraints import (
    QUALITATIVE,
    QUANTITATIVE,
    Constraint,
    ConstraintCatalog,
    Mechanism,
    Similarity,
    Speed,
    ValueDomain,
    Variance,
    ViolationFeature,
    detect_violations,
    evaluate_constraint,
    load_catalog,
    save_catalog,
    split_feature,
)
from aexplain.errors import DomainArityError, MissingSensor, SchemaError
from aexplain.series import SeriesBundle


def bundle(cols: dict, step_ms=1000):
    n = len(next(iter(cols.values())))
    t = np.arange(n, dtype=np.int64) * step_ms
    return SeriesBundle.from_matrix(t, np.column_stack([np.asarray(v, float) for v in cols.values()]), list(cols))


def vd(cid="vd", s="S1", lo=0.0, hi=100.0):
    return Constraint(cid, "T1", QUANTITATIVE, (s,), ValueDomain(lo, hi))


def test_value_domain_satisfied():
    b = bundle({"S1": np.linspace(10, 90, 20)})
    assert evaluate_constraint(vd(), b) is None


def test_value_domain_relative_excess():
    b = bundle({"S1": [50, 110, 60, 125, 40]})
    v = evaluate_constraint(vd(), b)
    assert v.F == pytest.approx((0.10, 0.25))
    assert v.interval == (1000, 3000)
    assert v.K == 1


def test_value_domain_below_uses_unit_scale_for_zero_bound():
    v = evaluate_constraint(vd(lo=0.0), bundle({"S1": [-0.5, 5.0]}))
    assert v.F == pytest.approx((0.5, 0.5))


def test_mechanism_one_feature_k2():
    c = Constraint("me", "T2", QUANTITATIVE, ("S1", "S2"), Mechanism((1.0, -1.0), 0.0, 2.0))
    b = bundle({"S1": [0, 1, 5, 0], "S2": [0, 0, 0, 1]})
    v = evaluate_constraint(c, b)
    assert v.K == 2 and v.sequences == ("S1", "S2")
    assert v.F == pytest.approx((1.5, 1.5))  # (|5| - 2) / 2


def test_mechanism_over_four_sensors_is_single_feature():
    c = Constraint("me4", "T2", QUANTITATIVE, ("a", "b", "c", "d"), Mechanism((1.0, 1.0, 1.0, -3.0), 0.0, 0.1))
    b = bundle({"a": [1, 1, 9], "b": [1, 1, 1], "c": [1, 1, 1], "d": [1, 1, 1]})
    rep = detect_violations(ConstraintCatalog([c]), b)
    assert len(rep) == 1 and rep.features[0].K == 4
    assert len(detect_violations(ConstraintCatalog([c]), b, split=True)) == 4


def test_speed_metric():
    c = Constraint("sp", "T3", QUANTITATIVE, ("S1",), Speed(1.0))
    v = evaluate_constraint(c, bundle({"S1": [0.0, 0.5, 3.5, 4.0]}))
    assert v.F == pytest.approx((2.0, 2.0))  # 3 units/s against 1
    assert v.interval == (1000, 2000)


def test_variance_tumbling_windows():
    c = Constraint("va", "T3", QUANTITATIVE, ("S1",), Variance(4, 1.0), window=4)
    x = [0, 0, 0, 0, 0, 4, 0, 4, 1]  # second window has var 4; trailing sample ignored
    v = evaluate_constraint(c, bundle({"S1": x}))
    assert v.F == pytest.approx((3.0, 3.0))
    assert v.interval == (4000, 7000)


def test_similarity_is_qualitative():
    c = Constraint("si", "T4", QUALITATIVE, ("a", "b"), Similarity(5, 0.5), window=5)
    a = [1, 2, 3, 4, 5, 1, 2, 3, 4, 5]
    b = [1, 2, 3, 4, 5, 5, 4, 3, 2, 1]
    v = evaluate_constraint(c, bundle({"a": a, "b": b}))
    assert v.F == 1 and v.kind == QUALITATIVE and v.K == 2
    assert v.interval == (5000, 9000)


def test_too_short_for_window_gives_nothing():
    c = Constraint("va", "T3", QUANTITATIVE, ("S1",), Variance(10, 0.0))
    assert evaluate_constraint(c, bundle({"S1": [0, 100, 0]})) is None


def test_metric_clamped_to_domain():
    v = evaluate_constraint(vd(hi=1.0), bundle({"S1": [1000.0]}))
    assert v.F == (10.0, 10.0)


def test_missing_sensor():
    with pytest.raises(MissingSensor):
        evaluate_constraint(vd(s="nope"), bundle({"S1": [1.0]}))


def test_detect_reports_errors_and_continues():
    cat = ConstraintCatalog([vd("a"), vd("b", s="nope"), vd("c")])
    rep = detect_violations(cat, bundle({"S1": [500.0]}))
    assert [v.constraint_id for v in rep] == ["a", "c"]
    assert list(rep.errors) == ["b"]


def test_detect_three_distinct_constraints():
    cat = ConstraintCatalog([vd("v1", "a"), vd("v2", "b"), vd("v3", "c"), vd("v4", "d")])
    b = bundle({"a": [50, 150], "b": [-20, 50], "c": [50, 101], "d": [50, 50]})
    assert len(detect_violations(cat, b)) == 3


def test_detect_threads_same_output():
    cat = ConstraintCatalog([vd(f"v{i}", "a", hi=float(i)) for i in range(1, 30)])
    b = bundle({"a": np.linspace(0, 40, 50)})
    assert detect_violations(cat, b, threads=4).features == detect_violations(cat, b).features


def test_t1_with_two_sensors():
    with pytest.raises(DomainArityError):
        Constraint("x", "T1", QUANTITATIVE, ("a", "b"), ValueDomain(0, 1))


def test_negative_speed_is_schema_error():
    with pytest.raises(SchemaError):
        load_catalog([{"id": "s", "ctype": "T3", "kind": "quantitative", "domain": ["a"], "check": {"variant": "speed", "max_rate": -1}}])


@pytest.mark.parametrize(
    "doc",
    [
        {"id": "a", "ctype": "T1", "kind": "quantitative", "domain": ["a"]},
        {"id": "a", "ctype": "T1", "kind": "quantitative", "domain": ["a"], "check": {"variant": "bogus"}},
        {"id": "a", "ctype": "T1", "kind": "quantitative", "domain": ["a"], "check": {"variant": "value_domain", "lo": 1}},
        {"id": "a", "ctype": "T3", "kind": "quantitative", "domain": ["a"], "check": {"variant": "variance", "window_len": 1, "max_var": 1}},
        {"id": "a", "ctype": "T2", "kind": "quantitative", "domain": ["a", "b"], "check": {"variant": "mechanism", "coeffs": [1], "offset": 0, "tol": 1}},
        {"id": "a", "ctype": "T1", "kind": "quantitative", "domain": ["a"], "check": {"variant": "value_domain", "lo": 0, "hi": float("inf")}},
    ],
)
def test_schema_errors(doc):
    with pytest.raises(SchemaError):
        load_catalog([doc])


def test_similarity_needs_a_pair():
    with pytest.raises(DomainArityError):
        Constraint("s", "T4", QUALITATIVE, ("a", "b", "c"), Similarity(5, 0.5))


def test_catalog_roundtrip(tmp_path):
    cat = ConstraintCatalog(
        [
            vd(),
            Constraint("me", "T2", QUANTITATIVE, ("a", "b"), Mechanism((1.0, -2.0), 0.5, 0.1)),
            Constraint("sp", "T3", QUANTITATIVE, ("a",), Speed(2.0)),
            Constraint("va", "T3", QUANTITATIVE, ("a",), Variance(30, 1.0), window=30),
            Constraint("si", "T4", QUALITATIVE, ("a", "b"), Similarity(30, 0.4), window=30),
        ]
    )
    p = tmp_path / "c.json"
    save_catalog(cat, p)
    back = load_catalog(str(p))
    assert back.constraints() == cat.constraints()
    assert load_catalog(json.dumps(cat.to_json())).constraints() == cat.constraints()


def test_duplicate_ids_rejected():
    with pytest.raises(SchemaError):
        ConstraintCatalog([vd("a"), vd("a")])


def test_feature_roundtrip_and_split():
    v = ViolationFeature("me", ("a", "b"), (0.5, 1.0), (0, 10), 2)
    assert ViolationFeature.from_dict(v.to_dict()) == v
    parts = split_feature(v)
    assert [p.sequences for p in parts] == [("a",), ("b",)]
    assert all(p.K == 2 for p in parts)
    assert v.fid == "me[a+b]"


def test_clean_world_and_full_catalog_catalog_size():
    from aexplain.harness.world import build_world, generate_clean

    w = build_world(64, 210, 0, seed=5)
    assert len(w.catalog) == 210
    clean = generate_clean(64, 2000, 5, w)
    assert len(detect_violations(w.catalog, clean)) == 0


# -- properties -----------------------------------------------------------------------

CATALOG = ConstraintCatalog(
    [
        Constraint("vd", "T1", QUANTITATIVE, ("a",), ValueDomain(-1.0, 1.0)),
        Constraint("sp", "T3", QUANTITATIVE, ("a",), Speed(1.0)),
        Constraint("va", "T3", QUANTITATIVE, ("b",), Variance(4, 0.5), window=4),
        Constraint("me", "T2", QUANTITATIVE, ("a", "b"), Mechanism((1.0, -1.0), 0.0, 0.5)),
        Constraint("si", "T4", QUALITATIVE, ("a", "b"), Similarity(4, 0.3), window=4),
    ]
)

series = st.lists(st.floats(-3, 3, allow_nan=False), min_size=12, max_size=60)


@given(series, st.data())
def test_enlarging_interval_keeps_features(xs, data):
    ys = data.draw(st.lists(st.floats(-3, 3, allow_nan=False), min_size=len(xs), max_size=len(xs)))
    b = bundle({"a": xs, "b": ys})
    n = len(xs)
    i0 = data.draw(st.integers(0, n - 1))
    i1 = data.draw(st.integers(i0, n - 1))
    j0 = data.draw(st.integers(0, i0))
    j1 = data.draw(st.integers(i1, n - 1))
    small = {v.constraint_id for v in detect_violations(CATALOG, b, (i0 * 1000, i1 * 1000))}
    big = {v.constraint_id for v in detect_violations(CATALOG, b, (j0 * 1000, j1 * 1000))}
    assert small <= big


@given(series)
def test_one_feature_per_constraint_with_valid_degrees(xs):
    b = bundle({"a": xs, "b": xs[::-1]})
    feats = detect_violations(CATALOG, b).features
    ids = [v.constraint_id for v in feats]
    assert ids == sorted(set(ids))
    for v in feats:
        assert v.K == len(v.sequences) >= 1
        if v.kind == QUALITATIVE:
            assert v.F == 1
        else:
            assert -10 <= v.F[0] <= v.F[1] <= 10
            assert v.F[0] > 0
