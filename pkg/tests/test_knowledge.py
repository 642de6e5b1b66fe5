import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from aexplain.constraints import QUALITATIVE, QUANTITATIVE, Constraint, ConstraintCatalog, Similarity, ValueDomain
from aexplain.errors import DanglingConstraint, EmptyExactSet, OverlapError
from aexplain.knowledge import (
    Explanation,
    KnowledgeSet,
    PossibleRep,
    Representation,
    degrade_knowledge,
    load_knowledge,
    save_knowledge,
    split_knowledge,
    validate_knowledge,
)


def rep(cid, lo=0.1, hi=0.5, seqs=("a",)):
    return Representation(cid, seqs, (lo, hi))


def event(eid, n_possible=0, w=0.5):
    return Explanation(eid, f"fault {eid}", (rep(f"{eid}.x"),), tuple(PossibleRep(rep(f"{eid}.p{i}"), w) for i in range(n_possible)))


def fixture(n_events=10, per_event=10):
    return KnowledgeSet.of([event(f"E{i:02d}", per_event) for i in range(n_events)])


def test_sixty_events_load(tmp_path):
    ks = KnowledgeSet.of([event(f"E{i:02d}", 2) for i in range(60)])
    p = tmp_path / "k.json"
    save_knowledge(ks, p)
    assert len(load_knowledge(str(p))) == 60


def test_empty_exact_set():
    with pytest.raises(EmptyExactSet):
        load_knowledge({"events": [{"event_id": "E", "exact": [], "possible": []}]})


def test_overlap_between_sets():
    r = rep("c").to_dict()
    with pytest.raises(OverlapError):
        load_knowledge({"events": [{"event_id": "E", "exact": [r], "possible": [{"rep": r, "w": 0.5}]}]})


def test_dangling_constraint_warns():
    cat = ConstraintCatalog([Constraint("c", "T1", QUANTITATIVE, ("a",), ValueDomain(0, 1))])
    doc = {"events": [{"event_id": "E", "exact": [rep("other").to_dict()]}]}
    with pytest.warns(DanglingConstraint):
        ks = load_knowledge(doc, cat)
    assert len(ks) == 1


def test_version_defaults_to_one_and_infinite_bounds_parse():
    doc = {"events": [{"event_id": "E", "exact": [{"constraint_id": "c", "sequences": ["a"], "F_r": ["-inf", 0.2]}]}]}
    ks = load_knowledge(json.dumps(doc))
    assert ks.version == 1
    assert ks["E"].exact[0].F_r == (-math.inf, 0.2)


def test_validate_consistent_fixture():
    cat = ConstraintCatalog([Constraint("c", "T1", QUANTITATIVE, ("a",), ValueDomain(0, 1))])
    ks = KnowledgeSet.of([Explanation("E", "e", (rep("c"),))])
    assert validate_knowledge(ks, cat).defects == []


def test_validate_kind_mismatch():
    cat = ConstraintCatalog([Constraint("s", "T4", QUALITATIVE, ("a", "b"), Similarity(5, 0.5))])
    ks = KnowledgeSet.of([Explanation("E", "e", (rep("s", seqs=("a", "b")),))])
    assert any("qualitative" in d for d in validate_knowledge(ks, cat).defects)


def test_validate_weight_one():
    ks = KnowledgeSet.of([event("E", 1, w=1.0)])
    assert any("weight out of (0,1)" in d for d in validate_knowledge(ks).defects)


def test_degrade_fifteen_percent_of_hundred():
    ks = fixture()
    assert ks.n_possible == 100
    assert degrade_knowledge(ks, 15, 7).n_possible == 85


def test_degrade_zero_is_identity():
    ks = fixture()
    assert degrade_knowledge(ks, 0, 1) == ks


def test_degrade_deterministic():
    ks = fixture()
    assert degrade_knowledge(ks, 20, 3) == degrade_knowledge(ks, 20, 3)


def test_degrade_rejects_bad_rate():
    with pytest.raises(ValueError):
        degrade_knowledge(fixture(), 120, 0)


def test_split_knowledge():
    ks = KnowledgeSet.of([Explanation("E", "e", (rep("me", seqs=("a", "b")),), (PossibleRep(rep("si", seqs=("a", "b")), 0.3),))])
    e = split_knowledge(ks)["E"]
    assert [r.sequences for r in e.exact] == [("a",), ("b",)]
    assert len(e.possible) == 2 and all(p.w == 0.3 for p in e.possible)


def test_with_events_bumps_version():
    ks = fixture(2, 1)
    assert ks.with_events([event("E99")]).version == ks.version + 1
    assert ks.with_events([event("E99")], bump=False).version == ks.version


# -- properties -------------------------------------------------------------------------

bounds = st.floats(-10, 10, allow_nan=False)


@st.composite
def knowledge_sets(draw):
    events = []
    for i in range(draw(st.integers(1, 6))):
        sigs = draw(st.lists(st.integers(0, 30), min_size=1, max_size=8, unique=True))
        n_exact = draw(st.integers(1, len(sigs)))
        reps = []
        for s in sigs:
            if draw(st.booleans()):
                a, b = sorted((draw(bounds), draw(bounds)))
                reps.append(Representation(f"c{s}", ("a",), (a, b)))
            else:
                reps.append(Representation(f"c{s}", ("a", "b"), 1))
        poss = tuple(
            PossibleRep(r, draw(st.floats(0.01, 0.99)), draw(st.integers(1, 5)), draw(st.integers(0, 5))) for r in reps[n_exact:]
        )
        events.append(Explanation(f"E{i}", f"label {i}", tuple(reps[:n_exact]), poss, draw(st.integers(0, 9))))
    return KnowledgeSet.of(events, draw(st.integers(1, 50)))


@given(knowledge_sets())
def test_persistence_roundtrip(ks):
    assert load_knowledge(json.dumps(ks.to_json())) == ks


@given(knowledge_sets(), st.floats(0, 100), st.integers(0, 2**31))
def test_degrade_keeps_exact_sets(ks, inr, seed):
    out = degrade_knowledge(ks, inr, seed)
    for e in ks.events():
        assert out[e.event_id].exact == e.exact
        kept = {p.rep.signature for p in out[e.event_id].possible}
        assert kept <= {p.rep.signature for p in e.possible}
    assert out.n_possible == ks.n_possible - math.ceil(inr * ks.n_possible / 100 - 1e-9)


@given(knowledge_sets(), st.integers(0, 2**31))
def test_degrade_nested_in_rate(ks, seed):
    lo = degrade_knowledge(ks, 4, seed)
    hi = degrade_knowledge(ks, 20, seed)
    for eid in ks:
        assert {p.rep.signature for p in hi[eid].possible} <= {p.rep.signature for p in lo[eid].possible}
